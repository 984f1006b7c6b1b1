#include "transid/classifier.hpp"
#include "transid/errors.hpp"
#include "transid/features.hpp"
#include "transid/geometry.hpp"
#include "transid/harness.hpp"
#include "transid/render.hpp"
#include "transid/rng.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

namespace py = pybind11;
using namespace transid;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const TransmissionImage& img)
{
    Array a({img.height, img.width});
    std::memcpy(a.mutable_data(), img.pixels.data(), img.pixels.size() * sizeof(double));
    return a;
}

TransmissionImage from_array(const Array& a, double pitch)
{
    if (a.ndim() != 2)
        throw ShapeError("image must be a 2-D array");
    TransmissionImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), pitch);
    std::memcpy(img.pixels.data(), a.data(), img.pixels.size() * sizeof(double));
    img.validate();
    return img;
}

py::list assertions_list(const std::vector<AssertionResult>& as)
{
    py::list out;
    for (const auto& a : as)
        out.append(py::dict(py::arg("name") = a.name, py::arg("passed") = a.passed, py::arg("detail") = a.detail));
    return out;
}

py::dict matrix_dict(const MatchRateMatrix& m)
{
    std::vector<std::vector<double>> rate(m.matched.size());
    for (std::size_t i = 0; i < rate.size(); ++i)
        for (std::size_t j = 0; j < m.matched[i].size(); ++j)
            rate[i].push_back(m.rate(i, j));
    return py::dict(py::arg("refs") = m.ref_labels, py::arg("targets") = m.target_labels,
                    py::arg("matched") = m.matched, py::arg("total") = m.total, py::arg("rate") = rate,
                    py::arg("csv") = m.to_csv());
}

} // namespace

PYBIND11_MODULE(_transid, m)
{
    m.doc() = "Transmission-image rendering, feature matching and classification";
    m.attr("__version__") = TRANSID_VERSION;

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<FootprintError>(m, "FootprintError", PyExc_RuntimeError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    m.def("derive_seed",
          [](std::uint64_t parent, std::uint64_t stream, std::uint64_t index) {
              return derive_seed(parent, static_cast<Stream>(stream), index);
          },
          py::arg("parent"), py::arg("stream"), py::arg("index") = 0);
    m.def("rng_uniform",
          [](std::uint64_t seed, std::size_t n) {
              Rng rng(seed);
              std::vector<double> v(n);
              for (double& x : v)
                  x = rng.uniform();
              return v;
          },
          py::arg("seed"), py::arg("n"));

    py::class_<ErrorModel>(m, "ErrorModel")
        .def(py::init<>())
        .def_static("none", &ErrorModel::none)
        .def_readwrite("sigma_pos", &ErrorModel::sigma_pos)
        .def_readwrite("sigma_width", &ErrorModel::sigma_width)
        .def_readwrite("sigma_layer", &ErrorModel::sigma_layer)
        .def_readwrite("dropout_prob", &ErrorModel::dropout_prob);

    py::class_<InfillSpec>(m, "InfillSpec")
        .def(py::init<>())
        .def_property(
            "pattern", [](const InfillSpec& s) { return std::string(to_string(s.pattern)); },
            [](InfillSpec& s, const std::string& p) { s.pattern = parse_pattern(p); })
        .def_readwrite("density", &InfillSpec::density)
        .def_property(
            "position_offset", [](const InfillSpec& s) { return std::pair{s.position_offset.x, s.position_offset.y}; },
            [](InfillSpec& s, std::pair<double, double> p) { s.position_offset = {p.first, p.second}; })
        .def_readwrite("layer_thickness", &InfillSpec::layer_thickness)
        .def_readwrite("printing_width", &InfillSpec::printing_width)
        .def_readwrite("shell_thickness", &InfillSpec::shell_thickness)
        .def_readwrite("error", &InfillSpec::error)
        .def_readwrite("seed", &InfillSpec::seed)
        .def("validate", &InfillSpec::validate)
        .def("to_json", [](const InfillSpec& s) { return spec_to_json(s); })
        .def_static("from_json", [](const std::string& t) { return spec_from_json(t); });

    py::class_<SliceGeometry>(m, "SliceGeometry")
        .def_property_readonly("layer_count", [](const SliceGeometry& g) { return g.layers.size(); })
        .def_property_readonly("strut_count", &SliceGeometry::strut_count)
        .def("to_text", [](const SliceGeometry& g) { return to_text(g); })
        .def_static("from_text", [](const std::string& t) { return geometry_from_text(t); })
        .def("__eq__", [](const SliceGeometry& a, const SliceGeometry& b) { return a == b; });

    m.def("realize", &realize, py::arg("spec"));
    m.def("path_length", [](const SliceGeometry& g, double x, double z) { return path_length(g, Ray{x, z}); },
          py::arg("geometry"), py::arg("x"), py::arg("z"));

    py::class_<OpticalParams>(m, "OpticalParams")
        .def(py::init<>())
        .def_readwrite("mu_solid", &OpticalParams::mu_solid)
        .def_readwrite("mu_air", &OpticalParams::mu_air)
        .def_readwrite("diffusion_sigma", &OpticalParams::diffusion_sigma)
        .def_readwrite("source_intensity", &OpticalParams::source_intensity);

    py::class_<ImagePlane>(m, "ImagePlane")
        .def(py::init<>())
        .def(py::init([](int w, int h, double pitch, double offset) { return ImagePlane{w, h, pitch, offset}; }),
             py::arg("width"), py::arg("height"), py::arg("pixel_pitch"), py::arg("camera_offset_x") = 0.0)
        .def_readwrite("width", &ImagePlane::width)
        .def_readwrite("height", &ImagePlane::height)
        .def_readwrite("pixel_pitch", &ImagePlane::pixel_pitch)
        .def_readwrite("camera_offset_x", &ImagePlane::camera_offset_x);

    m.def(
        "render",
        [](const SliceGeometry& g, const OpticalParams& o, std::pair<double, double> translation, double rotation,
           const ImagePlane& plane) {
            return to_array(render(g, o, Pose{{translation.first, translation.second}, rotation}, plane));
        },
        py::arg("geometry"), py::arg("optics") = OpticalParams{}, py::arg("translation") = std::pair{0.0, 0.0},
        py::arg("rotation_deg") = 0.0, py::arg("plane") = ImagePlane{});
    m.def(
        "apply_psf", [](const Array& a, double sigma) { return to_array(apply_psf(from_array(a, 1.0), sigma)); },
        py::arg("image"), py::arg("sigma"));
    m.def(
        "normalized_cross_correlation",
        [](const Array& a, const Array& b) {
            return normalized_cross_correlation(from_array(a, 1.0), from_array(b, 1.0));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "keypoint_count",
        [](const Array& a, double threshold) {
            return extract_features(from_array(a, 1.0), DetectorParams{threshold, 4, 1}).keypoints.size();
        },
        py::arg("image"), py::arg("threshold") = 1e-5);
    m.def(
        "match_rate_matrix",
        [](const std::vector<Array>& images, const std::vector<std::string>& labels, double threshold,
           double ratio) {
            std::vector<TransmissionImage> imgs;
            for (const auto& a : images)
                imgs.push_back(from_array(a, 1.0));
            return matrix_dict(match_rate_matrix(imgs, labels, MatchParams{DetectorParams{threshold, 4, 1}, ratio}));
        },
        py::arg("images"), py::arg("labels"), py::arg("threshold") = 1e-5, py::arg("ratio") = 0.7);

    m.def("default_config", [](const std::string& kind) { return config_to_json(default_config(parse_kind(kind))); },
          py::arg("kind"), "Resolved default config of an experiment kind, as JSON text.");
    m.def("resolve_config", [](const std::string& text) { return config_to_json(config_from_json(text)); },
          py::arg("config_json"));
    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::filesystem::path& out) {
            const ExperimentConfig cfg = config_from_json(config_json);
            std::vector<AssertionResult> as;
            {
                py::gil_scoped_release release;
                as = run_experiment(cfg, out);
            }
            return assertions_list(as);
        },
        py::arg("config_json"), py::arg("out") = std::filesystem::path{},
        "Runs the experiment described by the config; returns its assertions.");

    m.def(
        "predict",
        [](const std::filesystem::path& model_path, const std::vector<Array>& images) {
            const Model model = load_model(model_path);
            std::vector<TransmissionImage> imgs;
            for (const auto& a : images)
                imgs.push_back(from_array(a, 1.0));
            return predict(model, prepare_batch(imgs));
        },
        py::arg("model_path"), py::arg("images"));
}
