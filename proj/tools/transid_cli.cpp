#include "transid/errors.hpp"
#include "transid/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace transid;

namespace {

constexpr int kExitAssertion = 1;
constexpr int kExitError = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true)
{
    cmd->add_option("--config", c.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Master seed (overrides the config)");
    if (needs_out)
        cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

ExperimentConfig resolve(const Common& c, ExperimentKind kind)
{
    ExperimentConfig cfg = c.config.empty() ? default_config(kind) : load_config(c.config);
    if (cfg.kind != kind)
        throw ValidationError("config kind '" + std::string(to_string(cfg.kind)) + "' does not fit this command (" +
                              std::string(to_string(kind)) + ")");
    if (c.seed)
        cfg.seed = *c.seed;
    cfg.validate();
    return cfg;
}

int report(const std::vector<AssertionResult>& assertions)
{
    for (const auto& a : assertions)
        std::printf("%s %s: %s\n", a.passed ? "PASS" : "FAIL", a.name.c_str(), a.detail.c_str());
    return all_passed(assertions) ? 0 : kExitAssertion;
}

std::vector<fs::path> pgm_files(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw ValidationError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw ValidationError("no .pgm files in " + dir.string());
    return files;
}

void write_with_manifest(const fs::path& out, const std::vector<std::pair<std::string, std::string>>& files,
                         const std::string& config_text)
{
    std::vector<std::string> names;
    for (const auto& [rel, bytes] : files) {
        fs::create_directories((out / rel).parent_path());
        write_file(out / rel, bytes);
        names.push_back(rel);
    }
    write_file(out / "manifest.json", manifest_json(out, names, config_text));
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Transmission-image identification of 3D-printed infill"};
    app.set_version_flag("--version", std::string(TRANSID_VERSION));
    app.require_subcommand(1);

    // gen ------------------------------------------------------------------
    std::string spec_path;
    std::optional<std::uint64_t> spec_seed;
    std::string gen_out = "out";
    auto* gen = app.add_subcommand("gen", "Realize an infill spec and export its geometry");
    gen->add_option("--spec", spec_path, "Infill spec (JSON)")->required()->check(CLI::ExistingFile);
    gen->add_option("--seed", spec_seed, "Object seed (overrides the spec)");
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    // render ---------------------------------------------------------------
    Common render_c;
    double tx = 0.0, ty = 0.0, rot = 0.0;
    auto* render_cmd = app.add_subcommand("render", "Render one transmission image of an infill spec");
    render_cmd->add_option("--spec", spec_path, "Infill spec (JSON)")->required()->check(CLI::ExistingFile);
    render_cmd->add_option("--config", render_c.config, "Config supplying optics and image plane")
        ->check(CLI::ExistingFile);
    render_cmd->add_option("--seed", render_c.seed, "Object seed (overrides the spec)");
    render_cmd->add_option("--out", render_c.out, "Output directory")->capture_default_str();
    render_cmd->add_option("--tx", tx, "Translation along x, mm");
    render_cmd->add_option("--ty", ty, "Translation along y (depth), mm");
    render_cmd->add_option("--rot", rot, "Rotation about the vertical axis, degrees");

    // match ----------------------------------------------------------------
    Common match_c;
    std::string refs, targets;
    std::optional<double> ratio, threshold;
    auto* match = app.add_subcommand("match", "Match-rate matrix experiment, or match two image folders");
    add_common(match, match_c);
    match->add_option("--refs", refs, "Folder of reference .pgm images");
    match->add_option("--targets", targets, "Folder of target .pgm images");
    match->add_option("--ratio", ratio, "Ratio-test threshold");
    match->add_option("--threshold", threshold, "Hessian response threshold");

    // dataset --------------------------------------------------------------
    Common dataset_c;
    auto* dataset = app.add_subcommand("dataset", "Render the pose-grid dataset of a classify config");
    add_common(dataset, dataset_c);

    // train ----------------------------------------------------------------
    Common train_c;
    std::string train_dataset;
    auto* train_cmd = app.add_subcommand(
        "train", "Run the classify experiment (clean and augmented), or train on an existing dataset");
    add_common(train_cmd, train_c);
    train_cmd->add_option("--dataset", train_dataset, "Existing dataset directory (single clean run)");

    // eval -----------------------------------------------------------------
    std::string model_path, eval_dataset, eval_split = "test", eval_out;
    auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a dataset split");
    eval->add_option("--model", model_path, "Model file (.tidm)")->required()->check(CLI::ExistingFile);
    eval->add_option("--dataset", eval_dataset, "Dataset directory")->required();
    eval->add_option("--split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--out", eval_out, "Directory for reports/confusion.json");

    // sweeps ---------------------------------------------------------------
    Common robust_c, layer_c;
    auto* robust = app.add_subcommand("sweep-robustness", "Correlation under small pose changes");
    add_common(robust, robust_c);
    auto* layer = app.add_subcommand("sweep-layer", "Single-layer intensity versus thickness and attenuation");
    add_common(layer, layer_c);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            InfillSpec spec = spec_from_json(read_file(spec_path));
            if (spec_seed)
                spec.seed = *spec_seed;
            const SliceGeometry geom = realize(spec);
            const std::string spec_text = spec_to_json(spec);
            write_with_manifest(gen_out, {{"spec.json", spec_text}, {"geometry.txt", to_text(geom)}}, spec_text);
            std::printf("%zu layers, %zu struts -> %s\n", geom.layers.size(), geom.strut_count(),
                        (fs::path(gen_out) / "geometry.txt").c_str());
            return 0;
        }
        if (*render_cmd) {
            InfillSpec spec = spec_from_json(read_file(spec_path));
            if (render_c.seed)
                spec.seed = *render_c.seed;
            ExperimentConfig cfg = render_c.config.empty() ? default_config(ExperimentKind::Classify)
                                                           : load_config(render_c.config);
            const TransmissionImage img = render(realize(spec), cfg.optics, Pose{{tx, ty}, rot}, cfg.image);
            const std::string spec_text = spec_to_json(spec);
            write_with_manifest(render_c.out, {{"spec.json", spec_text}, {"images/render.pgm", encode_pgm(img)}},
                                spec_text);
            std::printf("mean intensity %.6f -> %s\n", img.mean(),
                        (fs::path(render_c.out) / "images" / "render.pgm").c_str());
            return 0;
        }
        if (*match) {
            if (!refs.empty() || !targets.empty()) {
                if (refs.empty() || targets.empty())
                    throw ValidationError("--refs and --targets go together");
                ExperimentConfig cfg = match_c.config.empty() ? default_config(ExperimentKind::MatchMatrix)
                                                              : load_config(match_c.config);
                MatchParams p{cfg.match.detector, ratio.value_or(cfg.match.ratio)};
                if (threshold)
                    p.detector.threshold = *threshold;
                std::vector<TransmissionImage> ri, ti;
                std::vector<std::string> rl, tl;
                for (const auto& f : pgm_files(refs)) {
                    ri.push_back(read_pgm(f));
                    rl.push_back(f.stem().string());
                }
                for (const auto& f : pgm_files(targets)) {
                    ti.push_back(read_pgm(f));
                    tl.push_back(f.stem().string());
                }
                const MatchRateMatrix m = match_rate_matrix(ri, rl, ti, tl, p);
                nlohmann::ordered_json params{{"refs", refs},
                                              {"targets", targets},
                                              {"ratio", p.ratio},
                                              {"threshold", p.detector.threshold},
                                              {"octaves", p.detector.octaves}};
                const std::string params_text = params.dump(2) + "\n";
                write_with_manifest(match_c.out,
                                    {{"match_params.json", params_text},
                                     {"reports/match.csv", m.to_csv()},
                                     {"reports/match.json", m.to_json()}},
                                    params_text);
                std::fputs(m.to_csv().c_str(), stdout);
                return 0;
            }
            ExperimentConfig cfg = resolve(match_c, ExperimentKind::MatchMatrix);
            if (ratio)
                cfg.match.ratio = *ratio;
            if (threshold)
                cfg.match.detector.threshold = *threshold;
            const auto result = run_match_experiment(cfg, match_c.out);
            for (const auto& b : result.blocks)
                std::printf("block %-10s off-diagonal %.4f far-pair %.4f diagonal %.4f\n", b.name.c_str(),
                            b.mean_off_diagonal, b.mean_far_pair, b.mean_diagonal);
            return report(result.assertions);
        }
        if (*dataset) {
            const ExperimentConfig cfg = resolve(dataset_c, ExperimentKind::Classify);
            const BuiltDataset ds = build_dataset(cfg);
            const std::string config_text = config_to_json(cfg);
            write_dataset(ds, dataset_c.out);
            write_file(fs::path(dataset_c.out) / "config.json", config_text);
            std::vector<std::string> files{"config.json", "reports/dataset.csv"};
            for (const auto& e : ds.entries)
                files.push_back(e.file);
            write_file(fs::path(dataset_c.out) / "manifest.json", manifest_json(dataset_c.out, files, config_text));
            std::printf("%zu images (%zu train, %zu test) -> %s\n", ds.data.size(),
                        ds.data.indices(Split::Train).size(), ds.data.indices(Split::Test).size(),
                        dataset_c.out.c_str());
            return 0;
        }
        if (*train_cmd) {
            const ExperimentConfig cfg = resolve(train_c, ExperimentKind::Classify);
            auto progress = [](std::string_view variant, const EpochStats& e) {
                std::printf("%-9.*s epoch %3d  loss %.4f  train %.3f  test %.3f\n", static_cast<int>(variant.size()),
                            variant.data(), e.epoch, e.train_loss, e.train_acc, e.test_acc);
                std::fflush(stdout);
            };
            if (!train_dataset.empty()) {
                const BuiltDataset ds = read_dataset(train_dataset);
                ds.data.validate();
                const ModelConfig mc{ds.data.images[0].height, ds.data.images[0].width, 1, 8, 16,
                                     ds.data.num_classes};
                TrainConfig tc = cfg.classify.train;
                tc.seed = cfg.seed;
                const TrainResult tr =
                    train(init_model(mc, cfg.seed), ds.data, tc, [&](const EpochStats& e) { progress("clean", e); });
                const Evaluation ev = evaluate(tr.model, ds.data, Split::Test);
                const std::string config_text = config_to_json(cfg);
                write_with_manifest(train_c.out,
                                    {{"config.json", config_text},
                                     {"models/model.tidm", serialize_model(tr.model)},
                                     {"reports/trace.csv", tr.trace.to_csv()}},
                                    config_text);
                return report({{"accuracy", ev.accuracy >= cfg.classify.min_accuracy,
                                std::to_string(ev.accuracy) + " on " + std::to_string(ev.total) + " test images"}});
            }
            return report(run_classify_experiment(cfg, train_c.out, progress).assertions);
        }
        if (*eval) {
            const Model model = load_model(model_path);
            const BuiltDataset ds = read_dataset(eval_dataset);
            const Evaluation ev = evaluate(model, ds.data, eval_split == "train" ? Split::Train : Split::Test);
            std::printf("accuracy %.4f on %zu %s images\n", ev.accuracy, ev.total, eval_split.c_str());
            if (!eval_out.empty()) {
                nlohmann::ordered_json j{{"labels", ds.class_labels},
                                         {"split", eval_split},
                                         {"accuracy", ev.accuracy},
                                         {"total", ev.total},
                                         {"confusion", ev.confusion}};
                fs::create_directories(fs::path(eval_out) / "reports");
                write_file(fs::path(eval_out) / "reports" / "confusion.json", j.dump(2) + "\n");
            }
            return 0;
        }
        if (*robust)
            return report(run_robustness_sweep(resolve(robust_c, ExperimentKind::RobustnessSweep), robust_c.out)
                              .assertions);
        if (*layer)
            return report(run_layer_sweep(resolve(layer_c, ExperimentKind::LayerSweep), layer_c.out).assertions);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    }
    return kExitError;
}
