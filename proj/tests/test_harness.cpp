#include "transid/errors.hpp"
#include "transid/harness.hpp"
#include "transid/rng.hpp"

#include "json.hpp"

#include "doctest.h"

#include <filesystem>
#include <set>

using namespace transid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("transid_test_" + name);
    fs::remove_all(p);
    return p;
}

/// Two small objects on a 40 x 40 frame; 5 x 5 cells and 4 rotations.
ExperimentConfig tiny_classify()
{
    ExperimentConfig c = default_config(ExperimentKind::Classify);
    InfillSpec s;
    s.object_size = {10.0, 10.0, 10.0};
    s.density = 0.2;
    c.objects = {ObjectEntry{"a", s, 1, std::nullopt}, ObjectEntry{"b", s, 1, std::nullopt}};
    c.image = ImagePlane{40, 40, 0.5, 0.0};
    c.pose_grid = PoseGrid{2.0, 0.5, 90.0};
    c.classify.train.epochs = 1;
    c.classify.augmented_epochs = 1;
    c.augmentation.rotations = {5.0};
    return c;
}

ExperimentConfig parse(const std::string& text)
{
    return config_from_json(text);
}

} // namespace

TEST_CASE("every default config validates and round-trips through JSON")
{
    for (auto kind : {ExperimentKind::MatchMatrix, ExperimentKind::Classify, ExperimentKind::LayerSweep,
                      ExperimentKind::RobustnessSweep}) {
        const ExperimentConfig c = default_config(kind);
        CAPTURE(to_string(kind));
        CHECK_NOTHROW(c.validate());
        const std::string text = config_to_json(c);
        const ExperimentConfig back = parse(text);
        CHECK(back == c);
        CHECK(config_to_json(back) == text);
        CHECK(parse_kind(to_string(kind)) == kind);
    }
}

TEST_CASE("partial configs fill in the kind defaults")
{
    const ExperimentConfig c = parse(R"({"kind": "classify", "seed": 9, "train": {"epochs": 2}})");
    ExperimentConfig expect = default_config(ExperimentKind::Classify);
    expect.seed = 9;
    expect.classify.train.epochs = 2;
    CHECK(c == expect);
}

TEST_CASE("invalid configs are rejected")
{
    CHECK_THROWS_AS(parse(R"({"kind": "layer-sweep", "pose_grid": {"grid_step": 0}})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "layer-sweep", "pose_grid": {"rotation_step": 7}})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "juggle"})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"seed": 1})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "layer-sweep", "colour": 1})"), FormatError);
    CHECK_THROWS_AS(parse(R"({"kind": "layer-sweep", "optics": {"mu": 1}})"), FormatError);
    CHECK_THROWS_AS(parse(R"({"kind": "layer-sweep", "layer": {"thicknesses": []}})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "classify", "objects": [{"label": "x", "spec": {}}]})"), ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "classify", "objects": [{"label": "x", "spec_file": "missing.json"}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse(R"({"kind": "classify", "objects": [{"label": "x", "spec": {"density": 2.0}}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse("{not json"), FormatError);
    CHECK_THROWS_AS(parse(R"({"kind": "classify", "objects": [{"label": "x", "spec": {}}, {"label": "x", "spec": {}}]})"),
                    ValidationError);
}

TEST_CASE("spec files are resolved relative to the config")
{
    const fs::path dir = scratch("specfile");
    fs::create_directories(dir / "specs");
    InfillSpec s;
    s.pattern = InfillPattern::Hexagonal;
    s.density = 0.15;
    write_file(dir / "specs" / "hex.json", spec_to_json(s));
    write_file(dir / "cfg.json", R"({"kind": "classify", "objects": [
        {"label": "h", "spec_file": "specs/hex.json", "count": 2},
        {"label": "d", "spec": {"pattern": "diamond", "density": 0.2}}]})");
    const ExperimentConfig c = load_config(dir / "cfg.json");
    REQUIRE(c.objects.size() == 2);
    CHECK(c.objects[0].spec == s);
    const auto expanded = c.expanded_objects();
    REQUIRE(expanded.size() == 3);
    std::set<std::string> labels;
    for (const auto& o : expanded)
        labels.insert(o.label);
    CHECK(labels == std::set<std::string>{"h00", "h01", "d"});
    CHECK(spec_from_json(spec_to_json(s)) == s);
    fs::remove_all(dir);
}

TEST_CASE("object seeds are derived per expanded index unless pinned")
{
    CHECK(object_seed(1, 0) == derive_seed(1, Stream::Object, 0));
    CHECK(object_seed(1, 3) != object_seed(1, 4));
    CHECK(object_seed(1, 3) != object_seed(2, 3));
}

TEST_CASE("pose grid coordinates are centred")
{
    const PoseGrid g{2.0, 0.5, 45.0};
    CHECK(g.positions_per_axis() == 5);
    CHECK(g.rotation_count() == 8);
    CHECK(g.coordinate(0) == doctest::Approx(-1.0));
    CHECK(g.coordinate(2) == doctest::Approx(0.0));
    CHECK(g.coordinate(4) == doctest::Approx(1.0));
    CHECK(PoseGrid{0.0, 0.5, 360.0}.positions_per_axis() == 1);
}

TEST_CASE("default classify grid yields 200 images per object")
{
    const PoseGrid g = default_config(ExperimentKind::Classify).pose_grid;
    CHECK(g.positions_per_axis() * g.positions_per_axis() * g.rotation_count() == 200);
}

TEST_CASE("dataset split is pose-disjoint and shared across objects")
{
    const ExperimentConfig c = tiny_classify();
    const BuiltDataset ds = build_dataset(c);
    REQUIRE(ds.data.size() == 2u * 25u * 4u);
    CHECK(ds.class_labels == std::vector<std::string>{"a", "b"});
    std::set<std::pair<int, int>> train_cells, test_cells;
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        const auto cell = std::make_pair(ds.entries[i].gx, ds.entries[i].gy);
        (ds.data.split[i] == Split::Train ? train_cells : test_cells).insert(cell);
    }
    CHECK(test_cells.size() == static_cast<std::size_t>(c.classify.test_positions));
    for (const auto& cell : test_cells)
        CHECK(train_cells.count(cell) == 0);
    CHECK(ds.data.indices(Split::Test).size() == 2u * 5u * 4u);
    CHECK_NOTHROW(ds.data.validate());

    ExperimentConfig other = c;
    other.seed = 2;
    CHECK_FALSE(build_dataset(other).data.split == ds.data.split);
    CHECK(build_dataset(c).data.images == ds.data.images);
}

TEST_CASE("one object at one pose gives one image")
{
    ExperimentConfig c = tiny_classify();
    c.objects.resize(1);
    c.pose_grid = PoseGrid{0.0, 0.5, 360.0};
    const BuiltDataset ds = build_dataset(c);
    CHECK(ds.data.size() == 1);
}

TEST_CASE("datasets survive a write/read round trip")
{
    const fs::path dir = scratch("dataset");
    const BuiltDataset ds = build_dataset(tiny_classify());
    write_dataset(ds, dir);
    const BuiltDataset back = read_dataset(dir);
    CHECK(back.data.images == ds.data.images);
    CHECK(back.data.labels == ds.data.labels);
    CHECK(back.data.split == ds.data.split);
    CHECK(back.class_labels == ds.class_labels);
    CHECK(fs::exists(dir / ds.entries[0].file));
    fs::remove_all(dir);
}

TEST_CASE("classify experiment writes reports and reruns byte-identically")
{
    const ExperimentConfig c = tiny_classify();
    const fs::path a = scratch("classify_a"), b = scratch("classify_b");
    int epochs_seen = 0;
    const auto ra = run_classify_experiment(c, a, [&](std::string_view, const EpochStats&) { ++epochs_seen; });
    CHECK(epochs_seen == 2);
    CHECK(ra.clean.trace.epochs.size() == 1);
    CHECK(ra.assertions.size() == 3);
    for (const char* f : {"config.json", "manifest.json", "timings.json", "reports/classify.json",
                          "reports/trace_clean.csv", "reports/trace_augmented.csv", "models/clean.tidm"})
        CHECK_MESSAGE(fs::exists(a / f), f);
    run_classify_experiment(c, b);
    CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));

    // the written config reproduces the run
    const ExperimentConfig again = load_config(a / "config.json");
    CHECK(again == c);

    const auto manifest = nlohmann::json::parse(read_file(a / "manifest.json"));
    std::vector<std::string> paths;
    for (const auto& art : manifest["artifacts"]) {
        paths.push_back(art["path"].get<std::string>());
        CHECK(art["bytes"].get<std::uintmax_t>() == fs::file_size(a / paths.back()));
    }
    CHECK(std::is_sorted(paths.begin(), paths.end()));
    CHECK(std::find(paths.begin(), paths.end(), "timings.json") == paths.end());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("manifest changes with the config and the files")
{
    const fs::path dir = scratch("manifest");
    fs::create_directories(dir);
    write_file(dir / "x.txt", "hello");
    const std::string m1 = manifest_json(dir, {"x.txt"}, "{}");
    CHECK(manifest_json(dir, {"x.txt"}, "{}") == m1);
    CHECK(manifest_json(dir, {"x.txt"}, "{\"seed\":2}") != m1);
    const auto j = nlohmann::json::parse(m1);
    // sha256("hello")
    CHECK(j["artifacts"][0]["sha256"] == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    write_file(dir / "x.txt", "hellp");
    CHECK(manifest_json(dir, {"x.txt"}, "{}") != m1);
    fs::remove_all(dir);
}

TEST_CASE("robustness sweep: zero displacement correlates perfectly")
{
    ExperimentConfig c = default_config(ExperimentKind::RobustnessSweep);
    c.robustness.translations = {0.0, 0.25};
    c.robustness.rotations = {0.0};
    c.robustness.camera_offsets = {};
    const RobustnessResult r = run_robustness_sweep(c);
    bool saw_zero = false;
    for (const auto& row : r.rows)
        if (row.value == 0.0) {
            saw_zero = true;
            CHECK(row.ncc_diffusion == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(row.ncc_no_diffusion == doctest::Approx(1.0).epsilon(1e-12));
        }
    CHECK(saw_zero);
}

TEST_CASE("layer sweep rows follow the closed form")
{
    const LayerSweepResult r = run_layer_sweep(default_config(ExperimentKind::LayerSweep));
    for (const auto& row : r.rows)
        CHECK(std::abs(row.mean_intensity - row.closed_form) < 1e-9);
    CHECK(all_passed(r.assertions));
}

TEST_CASE("match experiment reports parse back")
{
    ExperimentConfig c = default_config(ExperimentKind::MatchMatrix);
    c.blocks.resize(1);
    c.match.assert_ordering = false;
    c.image = ImagePlane{128, 128, 0.5, 0.0};
    const fs::path dir = scratch("match");
    const MatchExperimentResult r = run_match_experiment(c, dir);
    REQUIRE(r.blocks.size() == 1);
    const MatchRateMatrix& m = r.blocks[0].replicates[0];
    CHECK(m.rate(0, 0) == 1.0);
    const MatchRateMatrix back = MatchRateMatrix::from_csv(read_file(dir / "reports" / "match_pattern_s1.csv"));
    CHECK(back.matched == m.matched);
    CHECK(back.total == m.total);
    CHECK(off_diagonal_mean(m) < 1.0);
    fs::remove_all(dir);
}

TEST_CASE("off-diagonal and far-pair means")
{
    MatchRateMatrix m;
    m.ref_labels = m.target_labels = {"a", "b", "c"};
    m.matched = {{10, 1, 2}, {3, 10, 4}, {5, 6, 10}};
    m.total = {{10, 10, 10}, {10, 10, 10}, {10, 10, 10}};
    CHECK(off_diagonal_mean(m) == doctest::Approx(0.35));
    CHECK(far_pair_mean(m) == doctest::Approx(0.35));
    m.matched[0][2] = 0;
    CHECK(far_pair_mean(m) == doctest::Approx(0.25));
}

TEST_CASE("density block: the far pair matches less than neighbouring densities")
{
    ExperimentConfig c = default_config(ExperimentKind::MatchMatrix);
    c.match.replicates = 5;
    const MatchExperimentResult r = run_match_experiment(c);
    const auto it = std::find_if(r.blocks.begin(), r.blocks.end(), [](const BlockResult& b) { return b.name == "density"; });
    REQUIRE(it != r.blocks.end());
    double near = 0.0;
    int count = 0;
    for (const auto& m : it->replicates)
        for (std::size_t i = 0; i + 1 < m.ref_labels.size(); ++i) {
            near += m.rate(i, i + 1) + m.rate(i + 1, i);
            count += 2;
        }
    CHECK(it->mean_far_pair < near / count);
}

TEST_CASE("a pinned duplicate object matches like itself")
{
    ExperimentConfig c = default_config(ExperimentKind::MatchMatrix);
    c.match.assert_ordering = false;
    ObjectEntry e;
    e.label = "a";
    e.spec.pattern = InfillPattern::DiamondFill;
    e.spec.density = 0.2;
    e.seed = 77;
    ObjectEntry twin = e;
    twin.label = "b";
    c.blocks = {MatchBlock{"twins", {e, twin}}};
    const MatchExperimentResult r = run_match_experiment(c);
    const MatchRateMatrix& m = r.blocks[0].replicates[0];
    CHECK(m.rate(0, 1) == doctest::Approx(m.rate(0, 0)).epsilon(0.02));
    CHECK(m.rate(1, 0) == doctest::Approx(m.rate(1, 1)).epsilon(0.02));
}
