#include "transid/harness.hpp"

#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <set>

namespace transid {

using json = nlohmann::ordered_json;

namespace {

constexpr std::string_view kKindNames[] = {"match-matrix", "classify", "layer-sweep", "robustness-sweep"};

template <class T>
void read_opt(const json& j, const char* key, T& out)
{
    if (auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("field '") + key + "': " + e.what());
        }
    }
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const char* where)
{
    if (!j.is_object())
        throw FormatError(std::string(where) + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto a : allowed)
            ok = ok || key == a;
        if (!ok)
            throw FormatError(std::string("unknown field '") + key + "' in " + where);
    }
}

Vec2 read_vec2(const json& j, const char* key)
{
    if (!j.is_array() || j.size() != 2)
        throw FormatError(std::string(key) + " must be [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

json spec_json(const InfillSpec& s)
{
    json j;
    j["schema"] = kConfigSchema;
    j["pattern"] = std::string(to_string(s.pattern));
    j["density"] = s.density;
    j["position_offset"] = {s.position_offset.x, s.position_offset.y};
    j["layer_thickness"] = s.layer_thickness;
    j["printing_width"] = s.printing_width;
    j["object_size"] = {s.object_size.x, s.object_size.y, s.object_size.z};
    j["shell_thickness"] = s.shell_thickness;
    j["error"] = {{"sigma_pos", s.error.sigma_pos},
                  {"sigma_width", s.error.sigma_width},
                  {"sigma_layer", s.error.sigma_layer},
                  {"dropout_prob", s.error.dropout_prob}};
    j["seed"] = s.seed;
    return j;
}

InfillSpec parse_spec(const json& j)
{
    check_keys(j,
               {"schema", "pattern", "density", "position_offset", "layer_thickness", "printing_width", "object_size",
                "shell_thickness", "error", "seed"},
               "infill spec");
    if (auto it = j.find("schema"); it != j.end() && *it != kConfigSchema)
        throw FormatError("unsupported spec schema " + it->dump());
    InfillSpec s;
    try {
        if (auto it = j.find("pattern"); it != j.end())
            s.pattern = parse_pattern(it->get<std::string>());
        read_opt(j, "density", s.density);
        if (auto it = j.find("position_offset"); it != j.end())
            s.position_offset = read_vec2(*it, "position_offset");
        read_opt(j, "layer_thickness", s.layer_thickness);
        read_opt(j, "printing_width", s.printing_width);
        if (auto it = j.find("object_size"); it != j.end()) {
            if (!it->is_array() || it->size() != 3)
                throw FormatError("object_size must be [x, y, z]");
            s.object_size = {(*it)[0].get<double>(), (*it)[1].get<double>(), (*it)[2].get<double>()};
        }
        read_opt(j, "shell_thickness", s.shell_thickness);
        if (auto it = j.find("error"); it != j.end()) {
            if (it->is_string() && *it == "none") {
                s.error = ErrorModel::none();
            } else {
                check_keys(*it, {"sigma_pos", "sigma_width", "sigma_layer", "dropout_prob"}, "error model");
                read_opt(*it, "sigma_pos", s.error.sigma_pos);
                read_opt(*it, "sigma_width", s.error.sigma_width);
                read_opt(*it, "sigma_layer", s.error.sigma_layer);
                read_opt(*it, "dropout_prob", s.error.dropout_prob);
            }
        }
        read_opt(j, "seed", s.seed);
    } catch (const json::exception& e) {
        throw FormatError(std::string("infill spec: ") + e.what());
    }
    s.validate();
    return s;
}

json parse_text(std::string_view text, const char* what)
{
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

ObjectEntry parse_object(const json& j, const std::filesystem::path& base_dir)
{
    check_keys(j, {"label", "spec", "spec_file", "count", "seed"}, "object entry");
    ObjectEntry o;
    read_opt(j, "label", o.label);
    read_opt(j, "count", o.count);
    if (auto it = j.find("seed"); it != j.end())
        o.seed = it->get<std::uint64_t>();
    const bool inline_spec = j.contains("spec");
    const bool file_spec = j.contains("spec_file");
    if (inline_spec == file_spec)
        throw ValidationError("object entry needs exactly one of 'spec' or 'spec_file'");
    if (inline_spec) {
        o.spec = parse_spec(j["spec"]);
    } else {
        const std::filesystem::path p = base_dir / j["spec_file"].get<std::string>();
        if (!std::filesystem::is_regular_file(p))
            throw ValidationError("spec file not found: " + p.string());
        o.spec = parse_spec(parse_text(read_file(p), p.string().c_str()));
    }
    return o;
}

json object_json(const ObjectEntry& o)
{
    json j;
    j["label"] = o.label;
    j["count"] = o.count;
    if (o.seed)
        j["seed"] = *o.seed;
    j["spec"] = spec_json(o.spec);
    return j;
}

json doubles(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v)
        a.push_back(x);
    return a;
}

InfillSpec with(InfillSpec s, InfillPattern p, double density, Vec2 offset = {})
{
    s.pattern = p;
    s.density = density;
    s.position_offset = offset;
    return s;
}

void validate_objects(const std::vector<ObjectEntry>& objects, const char* where)
{
    std::set<std::string> labels;
    for (const auto& o : objects) {
        if (o.count < 1)
            throw ValidationError(std::string(where) + ": object count must be >= 1");
        if (o.seed && o.count != 1)
            throw ValidationError(std::string(where) + ": an explicit seed requires count 1");
        o.spec.validate();
    }
    for (const auto& e : expand_objects(objects))
        if (!labels.insert(e.label).second)
            throw ValidationError(std::string(where) + ": duplicate object label '" + e.label + "'");
}

void require_finite(const std::vector<double>& v, const char* what)
{
    for (double x : v)
        if (!std::isfinite(x))
            throw ValidationError(std::string(what) + " must be finite");
}

} // namespace

ExperimentKind parse_kind(std::string_view name)
{
    for (std::size_t i = 0; i < std::size(kKindNames); ++i)
        if (name == kKindNames[i])
            return static_cast<ExperimentKind>(i);
    throw ValidationError("unknown experiment kind '" + std::string(name) + "'");
}

std::string_view to_string(ExperimentKind kind)
{
    return kKindNames[static_cast<std::size_t>(kind)];
}

int PoseGrid::positions_per_axis() const
{
    return static_cast<int>(std::floor(extent / step + 1e-9)) + 1;
}

int PoseGrid::rotation_count() const
{
    return static_cast<int>(std::lround(360.0 / rotation_step));
}

double PoseGrid::coordinate(int i) const
{
    return -0.5 * (positions_per_axis() - 1) * step + i * step;
}

void PoseGrid::validate() const
{
    if (!(step > 0.0) || !std::isfinite(step))
        throw ValidationError("grid_step must be > 0");
    if (!(extent >= 0.0) || !std::isfinite(extent))
        throw ValidationError("grid_extent must be >= 0");
    if (!(rotation_step > 0.0) || rotation_step > 360.0)
        throw ValidationError("rotation_step must be in (0, 360]");
    const double n = 360.0 / rotation_step;
    if (std::abs(n - std::round(n)) > 1e-9 * n)
        throw ValidationError("rotation_step must divide 360");
}

std::uint64_t object_seed(std::uint64_t master, std::size_t index)
{
    return derive_seed(master, Stream::Object, index);
}

std::vector<ObjectEntry> ExperimentConfig::expanded_objects() const
{
    return expand_objects(objects);
}

std::vector<ObjectEntry> expand_objects(const std::vector<ObjectEntry>& objects)
{
    std::vector<ObjectEntry> out;
    for (const auto& o : objects) {
        for (int k = 0; k < o.count; ++k) {
            ObjectEntry e = o;
            e.count = 1;
            char buf[16];
            if (o.label.empty()) {
                std::snprintf(buf, sizeof buf, "obj%02zu", out.size());
                e.label = buf;
            } else if (o.count > 1) {
                std::snprintf(buf, sizeof buf, "%02d", k);
                e.label = o.label + buf;
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

void ExperimentConfig::validate() const
{
    optics.validate();
    image.validate();
    pose_grid.validate();
    if (!(capture_noise >= 0.0) || !std::isfinite(capture_noise))
        throw ValidationError("capture_noise must be >= 0");
    validate_objects(objects, "objects");
    switch (kind) {
    case ExperimentKind::MatchMatrix: {
        if (blocks.empty())
            throw ValidationError("match experiment needs at least one block");
        std::set<std::string> names;
        for (const auto& b : blocks) {
            if (!names.insert(b.name).second)
                throw ValidationError("duplicate block name '" + b.name + "'");
            validate_objects(b.objects, "block");
            std::size_t n = 0;
            for (const auto& o : b.objects)
                n += static_cast<std::size_t>(o.count);
            if (n < 2)
                throw ValidationError("block '" + b.name + "' needs at least 2 objects");
        }
        if (!(match.ratio > 0.0 && match.ratio <= 1.0))
            throw ValidationError("ratio must be in (0, 1]");
        if (!(match.detector.threshold > 0.0) || match.detector.octaves < 1 || match.detector.init_sample < 1)
            throw ValidationError("detector parameters out of range");
        if (match.replicates < 1)
            throw ValidationError("replicates must be >= 1");
        break;
    }
    case ExperimentKind::Classify: {
        std::size_t n = 0;
        for (const auto& o : objects)
            n += static_cast<std::size_t>(o.count);
        if (n < 2)
            throw ValidationError("classification needs at least 2 objects");
        classify.train.validate();
        if (classify.augmented_epochs < 1)
            throw ValidationError("augmented_epochs must be >= 1");
        const int cells = pose_grid.positions_per_axis() * pose_grid.positions_per_axis();
        if (classify.test_positions < 1 || classify.test_positions >= cells)
            throw ValidationError("test_positions must leave at least one train and one test grid cell");
        if (!(classify.min_accuracy >= 0.0 && classify.min_accuracy <= 1.0))
            throw ValidationError("min_accuracy must be in [0, 1]");
        require_finite(augmentation.rotations, "augmentation rotations");
        if (!(augmentation.noise_sigma >= 0.0))
            throw ValidationError("augmentation noise_sigma must be >= 0");
        ModelConfig mc{image.height, image.width, 1, 8, 16, static_cast<int>(n)};
        mc.validate();
        break;
    }
    case ExperimentKind::RobustnessSweep:
        if (objects.size() != 1 || objects[0].count != 1)
            throw ValidationError("robustness sweep needs exactly one object");
        if (!(optics.diffusion_sigma > 0.0))
            throw ValidationError("robustness sweep needs diffusion_sigma > 0");
        require_finite(robustness.translations, "translations");
        require_finite(robustness.rotations, "rotations");
        require_finite(robustness.camera_offsets, "camera offsets");
        break;
    case ExperimentKind::LayerSweep:
        if (layer.thicknesses.empty())
            throw ValidationError("thickness list must be nonempty");
        for (double t : layer.thicknesses)
            if (!(t > 0.0) || !std::isfinite(t))
                throw ValidationError("thicknesses must be > 0");
        if (!(layer.state_fraction > 0.0 && layer.state_fraction < 1.0))
            throw ValidationError("state_fraction must be in (0, 1)");
        break;
    }
}

ExperimentConfig default_config(ExperimentKind kind)
{
    ExperimentConfig c;
    c.kind = kind;
    switch (kind) {
    case ExperimentKind::MatchMatrix: {
        c.image = ImagePlane{256, 256, 0.25, 0.0};
        c.pose_grid = PoseGrid{0.0, 0.5, 360.0};
        InfillSpec base;
        auto block = [](std::string name, std::vector<std::pair<std::string, InfillSpec>> items) {
            MatchBlock b{std::move(name), {}};
            for (auto& [label, spec] : items)
                b.objects.push_back(ObjectEntry{label, spec, 1, std::nullopt});
            return b;
        };
        using P = InfillPattern;
        c.blocks.push_back(block("pattern", {{"diamond", with(base, P::DiamondFill, 0.20)},
                                             {"linear", with(base, P::Linear, 0.20)},
                                             {"hexagonal", with(base, P::Hexagonal, 0.20)}}));
        c.blocks.push_back(block("density", {{"d10", with(base, P::DiamondFill, 0.10)},
                                             {"d20", with(base, P::DiamondFill, 0.20)},
                                             {"d30", with(base, P::DiamondFill, 0.30)}}));
        c.blocks.push_back(block("position", {{"p0", with(base, P::DiamondFill, 0.10, {0.0, 0.0})},
                                              {"p1", with(base, P::DiamondFill, 0.10, {1.0, 0.0})},
                                              {"p2", with(base, P::DiamondFill, 0.10, {2.0, 0.0})}}));
        MatchBlock same{"same", {ObjectEntry{"s", with(base, P::DiamondFill, 0.20), 3, std::nullopt}}};
        c.blocks.push_back(same);
        break;
    }
    case ExperimentKind::Classify: {
        c.optics.diffusion_sigma = 0.2;
        InfillSpec b;
        b.pattern = InfillPattern::DiamondFill;
        b.density = 0.20;
        c.objects.push_back(ObjectEntry{"b", b, 10, std::nullopt});
        c.classify.train.epochs = 30;
        c.classify.augmented_epochs = 10;
        break;
    }
    case ExperimentKind::RobustnessSweep: {
        c.optics.diffusion_sigma = 2.0;
        InfillSpec cube;
        cube.density = 0.10;
        c.objects.push_back(ObjectEntry{"cube", cube, 1, std::nullopt});
        c.pose_grid = PoseGrid{0.0, 0.5, 360.0};
        break;
    }
    case ExperimentKind::LayerSweep:
        c.pose_grid = PoseGrid{0.0, 0.5, 360.0};
        break;
    }
    return c;
}

InfillSpec spec_from_json(std::string_view text)
{
    return parse_spec(parse_text(text, "infill spec"));
}

std::string spec_to_json(const InfillSpec& spec)
{
    return spec_json(spec).dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text, const std::filesystem::path& base_dir)
{
    const json j = parse_text(text, "experiment config");
    check_keys(j,
               {"schema", "kind", "seed", "objects", "blocks", "optics", "image", "capture_noise", "pose_grid",
                "augmentation", "train", "match", "robustness", "layer"},
               "experiment config");
    if (auto it = j.find("schema"); it != j.end() && *it != kConfigSchema)
        throw FormatError("unsupported config schema " + it->dump());
    if (!j.contains("kind"))
        throw ValidationError("config needs a 'kind'");
    ExperimentConfig c = default_config(parse_kind(j["kind"].get<std::string>()));
    try {
        read_opt(j, "seed", c.seed);
        read_opt(j, "capture_noise", c.capture_noise);
        if (auto it = j.find("objects"); it != j.end()) {
            c.objects.clear();
            for (const auto& o : *it)
                c.objects.push_back(parse_object(o, base_dir));
        }
        if (auto it = j.find("blocks"); it != j.end()) {
            c.blocks.clear();
            for (const auto& b : *it) {
                check_keys(b, {"name", "objects"}, "match block");
                MatchBlock mb;
                read_opt(b, "name", mb.name);
                for (const auto& o : b.at("objects"))
                    mb.objects.push_back(parse_object(o, base_dir));
                c.blocks.push_back(std::move(mb));
            }
        }
        if (auto it = j.find("optics"); it != j.end()) {
            check_keys(*it, {"mu_solid", "mu_air", "diffusion_sigma", "source_intensity"}, "optics");
            read_opt(*it, "mu_solid", c.optics.mu_solid);
            read_opt(*it, "mu_air", c.optics.mu_air);
            read_opt(*it, "diffusion_sigma", c.optics.diffusion_sigma);
            read_opt(*it, "source_intensity", c.optics.source_intensity);
        }
        if (auto it = j.find("image"); it != j.end()) {
            check_keys(*it, {"width", "height", "pixel_pitch", "camera_offset_x"}, "image");
            read_opt(*it, "width", c.image.width);
            read_opt(*it, "height", c.image.height);
            read_opt(*it, "pixel_pitch", c.image.pixel_pitch);
            read_opt(*it, "camera_offset_x", c.image.camera_offset_x);
        }
        if (auto it = j.find("pose_grid"); it != j.end()) {
            check_keys(*it, {"grid_extent", "grid_step", "rotation_step"}, "pose_grid");
            read_opt(*it, "grid_extent", c.pose_grid.extent);
            read_opt(*it, "grid_step", c.pose_grid.step);
            read_opt(*it, "rotation_step", c.pose_grid.rotation_step);
        }
        if (auto it = j.find("augmentation"); it != j.end()) {
            check_keys(*it, {"rotations", "noise_sigma"}, "augmentation");
            read_opt(*it, "rotations", c.augmentation.rotations);
            read_opt(*it, "noise_sigma", c.augmentation.noise_sigma);
        }
        if (auto it = j.find("train"); it != j.end()) {
            check_keys(*it,
                       {"learning_rate", "momentum", "batch_size", "epochs", "augmented_epochs", "test_positions",
                        "min_accuracy"},
                       "train");
            read_opt(*it, "learning_rate", c.classify.train.learning_rate);
            read_opt(*it, "momentum", c.classify.train.momentum);
            read_opt(*it, "batch_size", c.classify.train.batch_size);
            read_opt(*it, "epochs", c.classify.train.epochs);
            read_opt(*it, "augmented_epochs", c.classify.augmented_epochs);
            read_opt(*it, "test_positions", c.classify.test_positions);
            read_opt(*it, "min_accuracy", c.classify.min_accuracy);
        }
        if (auto it = j.find("match"); it != j.end()) {
            check_keys(*it, {"threshold", "octaves", "init_sample", "ratio", "replicates", "assert_ordering"},
                       "match");
            read_opt(*it, "threshold", c.match.detector.threshold);
            read_opt(*it, "octaves", c.match.detector.octaves);
            read_opt(*it, "init_sample", c.match.detector.init_sample);
            read_opt(*it, "ratio", c.match.ratio);
            read_opt(*it, "replicates", c.match.replicates);
            read_opt(*it, "assert_ordering", c.match.assert_ordering);
        }
        if (auto it = j.find("robustness"); it != j.end()) {
            check_keys(*it, {"translations", "rotations", "camera_offsets", "min_correlation"}, "robustness");
            read_opt(*it, "translations", c.robustness.translations);
            read_opt(*it, "rotations", c.robustness.rotations);
            read_opt(*it, "camera_offsets", c.robustness.camera_offsets);
            read_opt(*it, "min_correlation", c.robustness.min_correlation);
        }
        if (auto it = j.find("layer"); it != j.end()) {
            check_keys(*it, {"thicknesses", "state_fraction", "closed_form_tolerance"}, "layer");
            read_opt(*it, "thicknesses", c.layer.thicknesses);
            read_opt(*it, "state_fraction", c.layer.state_fraction);
            read_opt(*it, "closed_form_tolerance", c.layer.closed_form_tolerance);
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    if (!std::filesystem::is_regular_file(path))
        throw ValidationError("config file not found: " + path.string());
    return config_from_json(read_file(path), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& c)
{
    json j;
    j["schema"] = kConfigSchema;
    j["kind"] = std::string(to_string(c.kind));
    j["seed"] = c.seed;
    j["objects"] = json::array();
    for (const auto& o : c.objects)
        j["objects"].push_back(object_json(o));
    if (c.kind == ExperimentKind::MatchMatrix || !c.blocks.empty()) {
        j["blocks"] = json::array();
        for (const auto& b : c.blocks) {
            json jb;
            jb["name"] = b.name;
            jb["objects"] = json::array();
            for (const auto& o : b.objects)
                jb["objects"].push_back(object_json(o));
            j["blocks"].push_back(jb);
        }
    }
    j["optics"] = {{"mu_solid", c.optics.mu_solid},
                   {"mu_air", c.optics.mu_air},
                   {"diffusion_sigma", c.optics.diffusion_sigma},
                   {"source_intensity", c.optics.source_intensity}};
    j["image"] = {{"width", c.image.width},
                  {"height", c.image.height},
                  {"pixel_pitch", c.image.pixel_pitch},
                  {"camera_offset_x", c.image.camera_offset_x}};
    j["capture_noise"] = c.capture_noise;
    j["pose_grid"] = {{"grid_extent", c.pose_grid.extent},
                      {"grid_step", c.pose_grid.step},
                      {"rotation_step", c.pose_grid.rotation_step}};
    j["augmentation"] = {{"rotations", doubles(c.augmentation.rotations)},
                         {"noise_sigma", c.augmentation.noise_sigma}};
    j["train"] = {{"learning_rate", c.classify.train.learning_rate},
                  {"momentum", c.classify.train.momentum},
                  {"batch_size", c.classify.train.batch_size},
                  {"epochs", c.classify.train.epochs},
                  {"augmented_epochs", c.classify.augmented_epochs},
                  {"test_positions", c.classify.test_positions},
                  {"min_accuracy", c.classify.min_accuracy}};
    j["match"] = {{"threshold", c.match.detector.threshold},
                  {"octaves", c.match.detector.octaves},
                  {"init_sample", c.match.detector.init_sample},
                  {"ratio", c.match.ratio},
                  {"replicates", c.match.replicates},
                  {"assert_ordering", c.match.assert_ordering}};
    j["robustness"] = {{"translations", doubles(c.robustness.translations)},
                       {"rotations", doubles(c.robustness.rotations)},
                       {"camera_offsets", doubles(c.robustness.camera_offsets)},
                       {"min_correlation", c.robustness.min_correlation}};
    j["layer"] = {{"thicknesses", doubles(c.layer.thicknesses)},
                  {"state_fraction", c.layer.state_fraction},
                  {"closed_form_tolerance", c.layer.closed_form_tolerance}};
    return j.dump(2) + "\n";
}

} // namespace transid
