// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 when any fails.
// `acceptance --only 3,5` runs a subset.

#include "gradcheck.hpp"
#include "oracles.hpp"

#include "transid/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>

using namespace transid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string failed_names(const std::vector<AssertionResult>& as)
{
    std::string s;
    for (const auto& a : as)
        if (!a.passed)
            s += (s.empty() ? "" : ", ") + a.name + " (" + a.detail + ")";
    return s;
}

// Criteria 1 and 2 share five full classification runs.
struct ClassifyRuns {
    std::vector<double> clean, augmented, seconds;
    std::vector<std::string> errors;
};

const ClassifyRuns& classify_runs()
{
    static const ClassifyRuns runs = [] {
        ClassifyRuns r;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            ExperimentConfig c = default_config(ExperimentKind::Classify);
            c.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            const auto res = run_classify_experiment(c, {}, [seed](std::string_view v, const EpochStats& e) {
                std::fprintf(stderr, "  seed %llu %-9s epoch %2d  loss %.4f  test %.3f\n",
                             static_cast<unsigned long long>(seed), std::string(v).c_str(), e.epoch, e.train_loss,
                             e.test_acc);
            });
            r.seconds.push_back(seconds_since(t0));
            r.clean.push_back(res.clean.error.empty() ? res.clean.test.accuracy : 0.0);
            r.augmented.push_back(res.augmented.error.empty() ? res.augmented.test.accuracy : 0.0);
            r.errors.push_back(res.clean.error + res.augmented.error);
        }
        return r;
    }();
    return runs;
}

Outcome classification_accuracy()
{
    const ClassifyRuns& r = classify_runs();
    int good = 0;
    double worst_time = 0.0;
    std::string detail = "clean accuracy per seed:";
    for (std::size_t i = 0; i < r.clean.size(); ++i) {
        good += r.clean[i] >= 0.90;
        worst_time = std::max(worst_time, r.seconds[i]);
        detail += fmt(" %.3f", r.clean[i]);
    }
    detail += "; " + std::to_string(good) + "/5 >= 0.90; slowest seed " + fmt("%.0f s", worst_time);
    return {good >= 4 && worst_time <= 900.0, detail};
}

Outcome augmented_ordering()
{
    const ClassifyRuns& r = classify_runs();
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < r.clean.size(); ++i) {
        const bool seed_ok = r.augmented[i] <= r.clean[i] && r.augmented[i] >= 0.90 && r.clean[i] >= 0.90;
        ok = ok && seed_ok;
        detail += (i ? "; " : "") + std::string("seed ") + std::to_string(i + 1) + fmt(" aug %.3f", r.augmented[i]) +
                  fmt(" clean %.3f", r.clean[i]) + (seed_ok ? "" : " FAIL") + r.errors[i];
    }
    return {ok, detail};
}

Outcome match_structure()
{
    ExperimentConfig c = default_config(ExperimentKind::MatchMatrix);
    c.match.replicates = 5;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_match_experiment(c);
    const double secs = seconds_since(t0);
    std::string detail;
    for (const auto& b : r.blocks)
        detail += b.name + fmt(" off %.4f", b.mean_off_diagonal) + fmt(" far %.4f", b.mean_far_pair) +
                  fmt(" diag %.4f; ", b.mean_diagonal);
    detail += fmt("%.1f s", secs);
    if (!all_passed(r.assertions))
        detail += "; failed: " + failed_names(r.assertions);
    return {all_passed(r.assertions) && secs <= 120.0, detail};
}

double interior_mean(const InfillSpec& spec, const ImagePlane& plane, const OpticalParams& optics)
{
    const TransmissionImage img = render(realize(spec), optics, Pose{}, plane);
    // central window well inside the shell
    const int w = plane.width, h = plane.height;
    return window_mean(img, w / 4, h / 4, w - w / 4, h - h / 4);
}

Outcome density_monotonicity()
{
    std::string detail;
    bool ok = true;
    auto sweep = [&](const char* name, InfillSpec base, std::vector<double> densities, const ExperimentConfig& c) {
        detail += std::string(detail.empty() ? "" : "; ") + name + ":";
        double prev = 2.0;
        for (std::size_t i = 0; i < densities.size(); ++i) {
            base.density = densities[i];
            base.seed = object_seed(c.seed, i);
            const double m = interior_mean(base, c.image, c.optics);
            detail += fmt(" %.6f", m);
            ok = ok && m < prev;
            prev = m;
        }
    };
    InfillSpec cube;
    sweep("cube {5,10,15}%", cube, {0.05, 0.10, 0.15}, default_config(ExperimentKind::Classify));
    InfillSpec dia;
    dia.pattern = InfillPattern::DiamondFill;
    sweep("density block {10,20,30}%", dia, {0.10, 0.20, 0.30}, default_config(ExperimentKind::MatchMatrix));
    return {ok, detail};
}

Outcome renderer_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 3; ++k) {
        const oracle::Scene sc = oracle::random_scene(200 + k);
        const SliceGeometry g = realize(sc.spec);
        worst = std::max(worst, oracle::max_abs_diff(render(g, sc.optics, sc.pose, sc.plane),
                                                     oracle::voxel_render(g, sc.optics, sc.pose, sc.plane)));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-3 && secs <= 60.0, fmt("max |delta| %.3e over 3 scenes", worst) + fmt(", %.1f s", secs)};
}

Outcome gradient_correctness()
{
    double worst = 0.0;
    std::size_t checked = 0, kinks = 0, zero = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto r = oracle::gradient_check(oracle::gradcheck_model(seed), oracle::random_batch(2, 1, 4, 4, 50 + seed),
                                              {0, 2});
        worst = std::max(worst, r.worst_relative);
        checked += r.checked;
        kinks += r.kinks;
        zero += r.zero_gradient;
    }
    return {worst < 1e-4 && kinks == 0,
            fmt("worst relative error %.3e", worst) + " over " + std::to_string(checked) + " parameters (" +
                std::to_string(zero) + " dead-unit zeros, " + std::to_string(kinks) + " unresolved kinks)"};
}

Outcome robustness()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_robustness_sweep(default_config(ExperimentKind::RobustnessSweep));
    const double secs = seconds_since(t0);
    std::string detail;
    for (const auto& a : r.assertions)
        detail += a.name + ": " + a.detail + "; ";
    detail += fmt("%.1f s", secs);
    return {all_passed(r.assertions) && secs <= 60.0, detail};
}

Outcome layer_sweep()
{
    const auto r = run_layer_sweep(default_config(ExperimentKind::LayerSweep));
    std::string detail;
    for (const auto& a : r.assertions)
        detail += (detail.empty() ? "" : "; ") + a.name + ": " + a.detail;
    return {all_passed(r.assertions), detail};
}

Outcome determinism()
{
    const fs::path root = fs::temp_directory_path() / "transid_acceptance_determinism";
    fs::remove_all(root);
    ExperimentConfig classify = default_config(ExperimentKind::Classify);
    classify.classify.train.epochs = 2;
    classify.classify.augmented_epochs = 1;
    const std::vector<std::pair<std::string, ExperimentConfig>> runs{
        {"match", default_config(ExperimentKind::MatchMatrix)},
        {"classify", classify},
        {"robustness", default_config(ExperimentKind::RobustnessSweep)},
        {"layer", default_config(ExperimentKind::LayerSweep)},
    };
    bool ok = true;
    std::string detail;
    for (const auto& [name, cfg] : runs) {
        run_experiment(cfg, root / (name + "_a"));
        run_experiment(cfg, root / (name + "_b"));
        const std::string a = read_file(root / (name + "_a") / "manifest.json");
        const std::string b = read_file(root / (name + "_b") / "manifest.json");
        const bool same = a == b;
        ok = ok && same;
        const auto artifacts = nlohmann::json::parse(a)["artifacts"].size();
        detail += (detail.empty() ? "" : "; ") + name + (same ? " identical" : " DIFFERENT") + " (" +
                  std::to_string(artifacts) + " artifacts)";
    }
    fs::remove_all(root);
    return {ok, detail};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"transid acceptance suite"};
    std::vector<int> only;
    app.add_option("--only", only, "criterion numbers to run")->delimiter(',')->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"classification accuracy", classification_accuracy},
        {"clean vs augmented ordering", augmented_ordering},
        {"match-matrix structure", match_structure},
        {"density monotonicity", density_monotonicity},
        {"renderer oracle", renderer_oracle},
        {"gradient correctness", gradient_correctness},
        {"robustness sweep", robustness},
        {"layer sweep", layer_sweep},
        {"determinism", determinism},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(number))
            continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.passed;
        std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", number, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
