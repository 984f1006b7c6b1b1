#include "transid/harness.hpp"

#include "transid/digest.hpp"
#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#ifndef TRANSID_VERSION
#define TRANSID_VERSION "0.0.0"
#endif

namespace transid {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

/// Files written by one run; nothing touches disk when root is empty.
class Output {
public:
    explicit Output(fs::path root) : root_(std::move(root)) {}

    bool enabled() const { return !root_.empty(); }

    void file(const std::string& rel, std::string_view bytes)
    {
        if (!enabled())
            return;
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path());
        write_file(p, bytes);
        files_.push_back(rel);
    }

    void image(const std::string& rel, const TransmissionImage& img) { file(rel, encode_pgm(img, 16)); }

    void stage(const std::string& name, double seconds) { timings_.emplace_back(name, seconds); }

    /// config.json, manifest.json and timings.json.
    void finish(const std::string& config_text)
    {
        if (!enabled())
            return;
        write_file(root_ / "manifest.json", manifest_json(root_, files_, config_text));
        json t = json::object();
        for (const auto& [name, s] : timings_)
            t[name] = s;
        write_file(root_ / "timings.json", t.dump(2) + "\n");
    }

private:
    fs::path root_;
    std::vector<std::string> files_;
    std::vector<std::pair<std::string, double>> timings_;
};

class Stopwatch {
public:
    double lap()
    {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

json assertions_json(const std::vector<AssertionResult>& a)
{
    json arr = json::array();
    for (const auto& r : a)
        arr.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    return arr;
}

TransmissionImage capture(const SliceGeometry& geom, const ExperimentConfig& c, const Pose& pose,
                          const ImagePlane& plane, std::uint64_t obj_seed, std::size_t index)
{
    TransmissionImage img = render(geom, c.optics, pose, plane);
    if (c.capture_noise > 0.0)
        img = add_noise(img, NoiseModel{c.capture_noise, derive_seed(obj_seed, Stream::Capture, index)});
    return img;
}

double max_abs_difference(const TransmissionImage& a, const TransmissionImage& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

std::string split_name(Split s)
{
    return s == Split::Train ? "train" : "test";
}

Split parse_split(const std::string& s)
{
    if (s == "train")
        return Split::Train;
    if (s == "test")
        return Split::Test;
    throw FormatError("unknown split '" + s + "'");
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

json confusion_json(const Evaluation& e, const std::vector<std::string>& labels)
{
    return {{"labels", labels}, {"accuracy", e.accuracy}, {"total", e.total}, {"confusion", e.confusion}};
}

} // namespace

bool all_passed(const std::vector<AssertionResult>& assertions)
{
    return std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.passed; });
}

std::string manifest_json(const fs::path& dir, std::vector<std::string> files, const std::string& config_json)
{
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    json j;
    j["tool"] = "transid";
    j["version"] = TRANSID_VERSION;
    j["config_sha256"] = sha256_hex(config_json);
    j["artifacts"] = json::array();
    for (const auto& rel : files) {
        const std::string bytes = read_file(dir / rel);
        j["artifacts"].push_back({{"path", rel}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
    }
    return j.dump(2) + "\n";
}

double off_diagonal_mean(const MatchRateMatrix& m)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.ref_labels.size(); ++i)
        for (std::size_t j = 0; j < m.target_labels.size(); ++j)
            if (i != j) {
                sum += m.rate(i, j);
                ++n;
            }
    return n ? sum / static_cast<double>(n) : 0.0;
}

double far_pair_mean(const MatchRateMatrix& m)
{
    const std::size_t n = std::min(m.ref_labels.size(), m.target_labels.size());
    if (n < 2)
        return 0.0;
    return 0.5 * (m.rate(0, n - 1) + m.rate(n - 1, 0));
}

// ---------------------------------------------------------------------------
// Dataset

BuiltDataset build_dataset(const ExperimentConfig& config)
{
    config.optics.validate();
    config.image.validate();
    config.pose_grid.validate();
    const auto objects = config.expanded_objects();
    if (objects.empty())
        throw ValidationError("dataset needs at least one object");

    const PoseGrid& grid = config.pose_grid;
    const int axis = grid.positions_per_axis();
    const int cells = axis * axis;
    const int rotations = grid.rotation_count();

    // Held-out grid cells, shared by every object so the split is pose-disjoint.
    std::vector<bool> test_cell(static_cast<std::size_t>(cells), false);
    if (cells > 1 && config.classify.test_positions > 0 && config.classify.test_positions < cells) {
        std::vector<int> order(static_cast<std::size_t>(cells));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, Stream::Split));
        for (int i = cells - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
        for (int i = 0; i < config.classify.test_positions; ++i)
            test_cell[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;
    }

    BuiltDataset out;
    out.data.num_classes = static_cast<int>(objects.size());
    out.data.provenance = std::string(to_string(config.kind)) + " seed=" + std::to_string(config.seed);
    for (std::size_t o = 0; o < objects.size(); ++o) {
        InfillSpec spec = objects[o].spec;
        spec.seed = objects[o].seed.value_or(object_seed(config.seed, o));
        const SliceGeometry geom = realize(spec);
        out.class_labels.push_back(objects[o].label);
        std::size_t idx = 0;
        for (int gy = 0; gy < axis; ++gy)
            for (int gx = 0; gx < axis; ++gx)
                for (int r = 0; r < rotations; ++r, ++idx) {
                    const Pose pose{{grid.coordinate(gx), grid.coordinate(gy)}, r * grid.rotation_step};
                    TransmissionImage img =
                        quantize(capture(geom, config, pose, config.image, spec.seed, idx), 16);
                    char name[160];
                    std::snprintf(name, sizeof name, "images/%s_x%d_y%d_r%03d.pgm", objects[o].label.c_str(), gx,
                                  gy, static_cast<int>(std::lround(r * grid.rotation_step)));
                    out.data.images.push_back(std::move(img));
                    out.data.labels.push_back(static_cast<int>(o));
                    out.data.split.push_back(test_cell[static_cast<std::size_t>(gy * axis + gx)] ? Split::Test
                                                                                                 : Split::Train);
                    out.entries.push_back(DatasetEntry{static_cast<int>(o), gx, gy, r, name});
                }
    }
    return out;
}

namespace {

std::string dataset_csv(const BuiltDataset& ds)
{
    std::string csv = "file,label,split,object,gx,gy,rotation\n";
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const auto& e = ds.entries[i];
        csv += e.file + "," + ds.class_labels[static_cast<std::size_t>(e.object)] + "," +
               split_name(ds.data.split[i]) + "," + std::to_string(e.object) + "," + std::to_string(e.gx) + "," +
               std::to_string(e.gy) + "," + std::to_string(e.rotation_index) + "\n";
    }
    return csv;
}

void emit_dataset(Output& out, const BuiltDataset& ds)
{
    for (std::size_t i = 0; i < ds.entries.size(); ++i)
        out.image(ds.entries[i].file, ds.data.images[i]);
    out.file("reports/dataset.csv", dataset_csv(ds));
}

} // namespace

void write_dataset(const BuiltDataset& dataset, const fs::path& dir)
{
    Output out(dir);
    emit_dataset(out, dataset);
}

BuiltDataset read_dataset(const fs::path& dir)
{
    const fs::path index = dir / "reports" / "dataset.csv";
    if (!fs::is_regular_file(index))
        throw ValidationError("no dataset index at " + index.string());
    std::istringstream in(read_file(index));
    std::string line;
    if (!std::getline(in, line) || line != "file,label,split,object,gx,gy,rotation")
        throw FormatError("dataset.csv: unexpected header");
    BuiltDataset ds;
    std::map<int, std::string> labels;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 7)
            throw FormatError("dataset.csv: expected 7 columns in '" + line + "'");
        DatasetEntry e;
        try {
            e = DatasetEntry{std::stoi(cells[3]), std::stoi(cells[4]), std::stoi(cells[5]), std::stoi(cells[6]),
                             cells[0]};
        } catch (const std::exception&) {
            throw FormatError("dataset.csv: bad number in '" + line + "'");
        }
        if (e.object < 0)
            throw FormatError("dataset.csv: negative object index");
        if (auto [it, fresh] = labels.emplace(e.object, cells[1]); !fresh && it->second != cells[1])
            throw FormatError("dataset.csv: object " + cells[3] + " has two labels");
        ds.data.images.push_back(read_pgm(dir / e.file));
        ds.data.labels.push_back(e.object);
        ds.data.split.push_back(parse_split(cells[2]));
        ds.entries.push_back(std::move(e));
    }
    if (ds.entries.empty())
        throw FormatError("dataset.csv lists no images");
    ds.data.num_classes = labels.rbegin()->first + 1;
    ds.class_labels.resize(static_cast<std::size_t>(ds.data.num_classes));
    for (const auto& [k, v] : labels)
        ds.class_labels[static_cast<std::size_t>(k)] = v;
    ds.data.provenance = dir.string();
    return ds;
}

// ---------------------------------------------------------------------------
// Match experiment

MatchExperimentResult run_match_experiment(const ExperimentConfig& config, const fs::path& out_dir)
{
    config.validate();
    if (config.kind != ExperimentKind::MatchMatrix)
        throw ValidationError("run_match_experiment needs kind match-matrix");
    Output out(out_dir);
    Stopwatch sw;
    const std::string config_text = config_to_json(config);
    out.file("config.json", config_text);

    std::size_t stride = 10;
    for (const auto& b : config.blocks)
        stride = std::max(stride, expand_objects(b.objects).size());

    const MatchParams params{config.match.detector, config.match.ratio};
    MatchExperimentResult result;
    bool diagonal_exact = true;
    std::string diagonal_detail;
    for (std::size_t bi = 0; bi < config.blocks.size(); ++bi) {
        const auto& block = config.blocks[bi];
        const auto objects = expand_objects(block.objects);
        BlockResult br;
        br.name = block.name;
        for (int rep = 0; rep < config.match.replicates; ++rep) {
            const std::uint64_t master = config.seed + static_cast<std::uint64_t>(rep);
            std::vector<TransmissionImage> images;
            std::vector<std::string> labels;
            for (std::size_t k = 0; k < objects.size(); ++k) {
                InfillSpec spec = objects[k].spec;
                spec.seed = objects[k].seed.value_or(object_seed(master, bi * stride + k));
                images.push_back(capture(realize(spec), config, Pose{}, config.image, spec.seed, 0));
                labels.push_back(objects[k].label);
                out.image("images/" + block.name + "_" + labels.back() + "_s" + std::to_string(master) + ".pgm",
                          images.back());
            }
            MatchRateMatrix m = match_rate_matrix(images, labels, params);
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (m.total[i][i] == 0 || m.matched[i][i] != m.total[i][i]) {
                    diagonal_exact = false;
                    diagonal_detail += (diagonal_detail.empty() ? "" : "; ") + block.name + "/" + labels[i] +
                                       " seed " + std::to_string(master) + ": " + std::to_string(m.matched[i][i]) +
                                       "/" + std::to_string(m.total[i][i]);
                }
            const std::string stem = "reports/match_" + block.name + "_s" + std::to_string(master);
            out.file(stem + ".csv", m.to_csv());
            out.file(stem + ".json", m.to_json());
            br.replicates.push_back(std::move(m));
        }
        for (const auto& m : br.replicates) {
            br.mean_off_diagonal += off_diagonal_mean(m);
            br.mean_far_pair += far_pair_mean(m);
            double d = 0.0;
            for (std::size_t i = 0; i < m.ref_labels.size(); ++i)
                d += m.rate(i, i);
            br.mean_diagonal += d / static_cast<double>(m.ref_labels.size());
        }
        const double n = static_cast<double>(br.replicates.size());
        br.mean_off_diagonal /= n;
        br.mean_far_pair /= n;
        br.mean_diagonal /= n;
        result.blocks.push_back(std::move(br));
    }
    out.stage("match", sw.lap());

    result.assertions.push_back(
        {"diagonal_exact", diagonal_exact, diagonal_exact ? "every diagonal survivor rate is 1" : diagonal_detail});

    if (config.match.assert_ordering) {
        auto find = [&](std::string_view name) -> const BlockResult* {
            for (const auto& b : result.blocks)
                if (b.name == name)
                    return &b;
            return nullptr;
        };
        const BlockResult* pattern = find("pattern");
        const BlockResult* density = find("density");
        const BlockResult* same = find("same");
        if (pattern && density && same) {
            double diag = 1.0;
            for (const auto& b : result.blocks)
                diag = std::min(diag, b.mean_diagonal);
            const bool ok = pattern->mean_off_diagonal < density->mean_far_pair &&
                            density->mean_far_pair < same->mean_off_diagonal && same->mean_off_diagonal < diag;
            result.assertions.push_back({"ordering", ok,
                                         "pattern " + fmt("%.4f", pattern->mean_off_diagonal) + " < density-far " +
                                             fmt("%.4f", density->mean_far_pair) + " < same " +
                                             fmt("%.4f", same->mean_off_diagonal) + " < diagonal " +
                                             fmt("%.4f", diag)});
        } else {
            result.assertions.push_back(
                {"ordering", false, "ordering needs blocks named 'pattern', 'density' and 'same'"});
        }
    }

    json summary;
    summary["replicates"] = config.match.replicates;
    summary["blocks"] = json::array();
    for (const auto& b : result.blocks)
        summary["blocks"].push_back({{"name", b.name},
                                     {"mean_off_diagonal", b.mean_off_diagonal},
                                     {"mean_far_pair", b.mean_far_pair},
                                     {"mean_diagonal", b.mean_diagonal}});
    summary["assertions"] = assertions_json(result.assertions);
    out.file("reports/match_summary.json", summary.dump(2) + "\n");
    out.finish(config_text);
    return result;
}

// ---------------------------------------------------------------------------
// Classification experiment

ClassifyExperimentResult run_classify_experiment(const ExperimentConfig& config, const fs::path& out_dir,
                                                 const VariantCallback& progress)
{
    config.validate();
    if (config.kind != ExperimentKind::Classify)
        throw ValidationError("run_classify_experiment needs kind classify");
    Output out(out_dir);
    Stopwatch sw;
    const std::string config_text = config_to_json(config);
    out.file("config.json", config_text);

    const BuiltDataset ds = build_dataset(config);
    ds.data.validate();
    emit_dataset(out, ds);
    out.stage("dataset", sw.lap());

    const ModelConfig mc{config.image.height, config.image.width, 1, 8, 16, ds.data.num_classes};
    const Model initial = init_model(mc, config.seed);

    auto run_variant = [&](const std::string& name, const LabeledDataset& data, int epochs) {
        VariantResult v;
        v.name = name;
        TrainConfig tc = config.classify.train;
        tc.epochs = epochs;
        tc.seed = config.seed;
        EpochCallback cb;
        if (progress)
            cb = [&](const EpochStats& e) { progress(name, e); };
        try {
            TrainResult tr = train(initial, data, tc, cb);
            v.model = std::move(tr.model);
            v.trace = std::move(tr.trace);
            v.test = evaluate(v.model, data, Split::Test);
        } catch (const DivergenceError& e) {
            v.error = e.what();
        }
        return v;
    };

    ClassifyExperimentResult result;
    result.clean = run_variant("clean", ds.data, config.classify.train.epochs);
    out.stage("train_clean", sw.lap());

    AugmentSpec aug;
    aug.rotations_deg = config.augmentation.rotations;
    aug.add_noise = config.augmentation.noise_sigma > 0.0;
    aug.noise = NoiseModel{config.augmentation.noise_sigma, derive_seed(config.seed, Stream::Augment)};
    const LabeledDataset augmented = augment_dataset(ds.data, aug);
    result.augmented = run_variant("augmented", augmented, config.classify.augmented_epochs);
    out.stage("train_augmented", sw.lap());

    const double bar = config.classify.min_accuracy;
    for (const VariantResult* v : {&result.clean, &result.augmented}) {
        const bool ok = v->error.empty() && v->test.accuracy >= bar;
        result.assertions.push_back({v->name + "_accuracy", ok,
                                     v->error.empty() ? fmt("%.4f", v->test.accuracy) + " >= " + fmt("%.2f", bar)
                                                      : "diverged: " + v->error});
    }
    const bool ordered = result.clean.error.empty() && result.augmented.error.empty() &&
                         result.augmented.test.accuracy <= result.clean.test.accuracy;
    result.assertions.push_back({"augmented_not_above_clean", ordered,
                                 fmt("%.4f", result.augmented.test.accuracy) +
                                     " <= " + fmt("%.4f", result.clean.test.accuracy)});

    json summary;
    summary["classes"] = ds.class_labels;
    summary["images"] = ds.data.size();
    summary["train_images"] = ds.data.indices(Split::Train).size();
    summary["test_images"] = ds.data.indices(Split::Test).size();
    for (const VariantResult* v : {&result.clean, &result.augmented}) {
        out.file("reports/trace_" + v->name + ".csv", v->trace.to_csv());
        out.file("reports/confusion_" + v->name + ".json", confusion_json(v->test, ds.class_labels).dump(2) + "\n");
        if (v->error.empty())
            out.file("models/" + v->name + ".tidm", serialize_model(v->model));
        summary[v->name] = {{"final_test_accuracy", v->test.accuracy},
                            {"epochs", v->trace.epochs.size()},
                            {"error", v->error}};
    }
    summary["assertions"] = assertions_json(result.assertions);
    out.file("reports/classify.json", summary.dump(2) + "\n");
    out.finish(config_text);
    return result;
}

// ---------------------------------------------------------------------------
// Robustness sweep

RobustnessResult run_robustness_sweep(const ExperimentConfig& config, const fs::path& out_dir)
{
    config.validate();
    if (config.kind != ExperimentKind::RobustnessSweep)
        throw ValidationError("run_robustness_sweep needs kind robustness-sweep");
    Output out(out_dir);
    Stopwatch sw;
    const std::string config_text = config_to_json(config);
    out.file("config.json", config_text);

    const ObjectEntry obj = config.expanded_objects().front();
    InfillSpec spec = obj.spec;
    spec.seed = obj.seed.value_or(object_seed(config.seed, 0));
    const SliceGeometry geom = realize(spec);

    // The PSF is applied to the attenuation image, so one ray-traced frame serves both arms.
    auto frames = [&](const Pose& pose, const ImagePlane& plane) {
        const TransmissionImage raw = render_attenuation(geom, config.optics, pose, plane);
        return std::pair{apply_psf(raw, config.optics.diffusion_sigma), raw};
    };
    const auto [ref_on, ref_off] = frames(Pose{}, config.image);
    out.image("images/robustness_reference.pgm", ref_on);

    RobustnessResult result;
    auto add = [&](const std::string& kind, double value, const Pose& pose, const ImagePlane& plane) {
        const auto [on, raw] = frames(pose, plane);
        RobustnessRow row{kind, value, normalized_cross_correlation(on, ref_on),
                          normalized_cross_correlation(raw, ref_off), max_abs_difference(raw, ref_off) > 1e-12};
        out.image("images/robustness_" + kind + "_" + fmt("%+.3f", value) + ".pgm", on);
        result.rows.push_back(row);
    };
    add("reference", 0.0, Pose{}, config.image);
    for (double t : config.robustness.translations)
        add("translation_x", t, Pose{{t, 0.0}, 0.0}, config.image);
    for (double t : config.robustness.translations)
        add("translation_y", t, Pose{{0.0, t}, 0.0}, config.image);
    for (double r : config.robustness.rotations)
        add("rotation", r, Pose{{0.0, 0.0}, r}, config.image);
    for (double c : config.robustness.camera_offsets) {
        ImagePlane plane = config.image;
        plane.camera_offset_x += c;
        add("camera_x", c, Pose{}, plane);
    }
    out.stage("sweep", sw.lap());

    double min_ncc = 1.0;
    std::string worst = "none";
    std::string regressions;
    std::string invariant;
    for (const auto& r : result.rows) {
        if ((r.kind == "translation_x" || r.kind == "translation_y" || r.kind == "rotation") &&
            r.ncc_diffusion < min_ncc) {
            min_ncc = r.ncc_diffusion;
            worst = r.kind + " " + fmt("%+.3f", r.value);
        }
        if (r.value == 0.0)
            continue;
        if (!r.image_changes)
            invariant += (invariant.empty() ? "" : "; ") + r.kind + " " + fmt("%+.3f", r.value);
        else if (!(r.ncc_diffusion > r.ncc_no_diffusion))
            regressions += (regressions.empty() ? "" : "; ") + r.kind + " " + fmt("%+.3f", r.value) + ": " +
                           fmt("%.6f", r.ncc_diffusion) + " <= " + fmt("%.6f", r.ncc_no_diffusion);
    }
    result.assertions.push_back({"min_correlation", min_ncc > config.robustness.min_correlation,
                                 "min " + fmt("%.6f", min_ncc) + " at " + worst + " (bar " +
                                     fmt("%.2f", config.robustness.min_correlation) + ")"});
    std::string detail = regressions.empty() ? "diffusion raises correlation at every image-changing displacement"
                                             : regressions;
    if (!invariant.empty())
        detail += "; unchanged without diffusion (excluded): " + invariant;
    result.assertions.push_back({"diffusion_helps", regressions.empty(), detail});

    std::string csv = "kind,value,ncc_diffusion,ncc_no_diffusion,image_changes\n";
    json rows = json::array();
    for (const auto& r : result.rows) {
        csv += r.kind + "," + fmt("%.17g", r.value) + "," + fmt("%.17g", r.ncc_diffusion) + "," +
               fmt("%.17g", r.ncc_no_diffusion) + "," + (r.image_changes ? "1" : "0") + "\n";
        rows.push_back({{"kind", r.kind},
                        {"value", r.value},
                        {"ncc_diffusion", r.ncc_diffusion},
                        {"ncc_no_diffusion", r.ncc_no_diffusion},
                        {"image_changes", r.image_changes}});
    }
    out.file("reports/robustness.csv", csv);
    out.file("reports/robustness.json",
             json{{"rows", rows}, {"assertions", assertions_json(result.assertions)}}.dump(2) + "\n");
    out.finish(config_text);
    return result;
}

// ---------------------------------------------------------------------------
// Layer sweep

LayerSweepResult run_layer_sweep(const ExperimentConfig& config, const fs::path& out_dir)
{
    config.validate();
    if (config.kind != ExperimentKind::LayerSweep)
        throw ValidationError("run_layer_sweep needs kind layer-sweep");
    Output out(out_dir);
    Stopwatch sw;
    const std::string config_text = config_to_json(config);
    out.file("config.json", config_text);

    const OpticalParams& base = config.optics;
    auto closed = [&](double mu, double t) { return base.source_intensity * std::exp(-mu * t); };

    LayerSweepResult result;
    std::vector<double> thickness_means;
    double max_state_shift = 0.0;
    for (double t : config.layer.thicknesses) {
        const TransmissionImage img = render_single_layer(t, base);
        out.image("images/layer_t" + fmt("%.3f", t) + ".pgm", img);
        const double mean = single_layer_interior(img);
        thickness_means.push_back(mean);
        result.rows.push_back({"thickness", t, base.mu_solid, mean, closed(base.mu_solid, t)});
        for (double sign : {-1.0, 1.0}) {
            OpticalParams o = base;
            o.mu_solid = base.mu_solid * (1.0 + sign * config.layer.state_fraction);
            const double m = single_layer_interior(render_single_layer(t, o));
            result.rows.push_back({"mu_solid", t, o.mu_solid, m, closed(o.mu_solid, t)});
            max_state_shift = std::max(max_state_shift, std::abs(m - mean));
        }
    }
    out.stage("sweep", sw.lap());

    double worst = 0.0;
    for (const auto& r : result.rows)
        worst = std::max(worst, std::abs(r.mean_intensity - r.closed_form));
    result.assertions.push_back({"closed_form", worst <= config.layer.closed_form_tolerance,
                                 "max |mean - exp(-mu t)| = " + fmt("%.3e", worst)});

    // Ordering is checked along increasing thickness.
    std::vector<std::size_t> order(config.layer.thicknesses.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return config.layer.thicknesses[a] < config.layer.thicknesses[b]; });
    bool decreasing = true;
    double min_step = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < order.size(); ++k) {
        const double step = thickness_means[order[k - 1]] - thickness_means[order[k]];
        decreasing = decreasing && step > 0.0;
        min_step = std::min(min_step, step);
    }
    result.assertions.push_back({"thickness_decreasing", decreasing,
                                 order.size() < 2 ? "single thickness" : "min step " + fmt("%.6e", min_step)});
    result.assertions.push_back({"state_smaller_than_thickness", max_state_shift < min_step,
                                 "max state shift " + fmt("%.6e", max_state_shift) + " vs min thickness step " +
                                     fmt("%.6e", min_step)});

    std::string csv = "parameter,thickness,mu_solid,mean_intensity,closed_form\n";
    json rows = json::array();
    for (const auto& r : result.rows) {
        csv += r.parameter + "," + fmt("%.17g", r.thickness) + "," + fmt("%.17g", r.mu_solid) + "," +
               fmt("%.17g", r.mean_intensity) + "," + fmt("%.17g", r.closed_form) + "\n";
        rows.push_back({{"parameter", r.parameter},
                        {"thickness", r.thickness},
                        {"mu_solid", r.mu_solid},
                        {"mean_intensity", r.mean_intensity},
                        {"closed_form", r.closed_form}});
    }
    out.file("reports/layer_sweep.csv", csv);
    out.file("reports/layer_sweep.json",
             json{{"rows", rows}, {"assertions", assertions_json(result.assertions)}}.dump(2) + "\n");
    out.finish(config_text);
    return result;
}

std::vector<AssertionResult> run_experiment(const ExperimentConfig& config, const fs::path& out)
{
    switch (config.kind) {
    case ExperimentKind::MatchMatrix:
        return run_match_experiment(config, out).assertions;
    case ExperimentKind::Classify:
        return run_classify_experiment(config, out).assertions;
    case ExperimentKind::RobustnessSweep:
        return run_robustness_sweep(config, out).assertions;
    case ExperimentKind::LayerSweep:
        return run_layer_sweep(config, out).assertions;
    }
    throw ValidationError("unknown experiment kind");
}

} // namespace transid
