#pragma once

#include "transid/classifier.hpp"
#include "transid/features.hpp"
#include "transid/geometry.hpp"
#include "transid/render.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace transid {

inline constexpr int kConfigSchema = 1;

enum class ExperimentKind { MatchMatrix, Classify, LayerSweep, RobustnessSweep };

ExperimentKind parse_kind(std::string_view name);
std::string_view to_string(ExperimentKind kind);

/// One object description. `count` replicates the spec under distinct seeds;
/// an explicit `seed` pins the object seed (count must then be 1).
struct ObjectEntry {
    std::string label;
    InfillSpec spec{};
    int count = 1;
    std::optional<std::uint64_t> seed;
    friend bool operator==(const ObjectEntry&, const ObjectEntry&) = default;
};

/// A named group of objects compared pairwise in a match experiment.
struct MatchBlock {
    std::string name;
    std::vector<ObjectEntry> objects;
    friend bool operator==(const MatchBlock&, const MatchBlock&) = default;
};

/// Capture positions on a square grid of half-width extent/2 around the
/// nominal pose, combined with rotations in steps of rotation_step degrees.
struct PoseGrid {
    double extent = 2.0;
    double step = 0.5;
    double rotation_step = 45.0;

    int positions_per_axis() const;
    int rotation_count() const;
    /// Grid coordinate of index i along one axis, in mm.
    double coordinate(int i) const;
    void validate() const;
    friend bool operator==(const PoseGrid&, const PoseGrid&) = default;
};

struct AugmentConfig {
    std::vector<double> rotations{5.0, 10.0, 15.0};
    double noise_sigma = 0.01;
    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct ClassifyConfig {
    TrainConfig train{};
    int augmented_epochs = 10;
    int test_positions = 5;
    double min_accuracy = 0.90;
    friend bool operator==(const ClassifyConfig&, const ClassifyConfig&) = default;
};

struct MatchConfig {
    DetectorParams detector{1e-5, 4, 1};
    double ratio = 0.7;
    int replicates = 1;
    /// Ordering assertion over block means: pattern < density (far pair) < same < diagonal.
    bool assert_ordering = true;
    friend bool operator==(const MatchConfig&, const MatchConfig&) = default;
};

struct RobustnessConfig {
    std::vector<double> translations{-0.5, -0.25, 0.25, 0.5};
    std::vector<double> rotations{-5.0, -2.5, 2.5, 5.0};
    std::vector<double> camera_offsets{-0.5, 0.5};
    double min_correlation = 0.95;
    friend bool operator==(const RobustnessConfig&, const RobustnessConfig&) = default;
};

struct LayerConfig {
    std::vector<double> thicknesses{0.1, 0.2, 0.3, 0.4};
    double state_fraction = 0.05;
    double closed_form_tolerance = 1e-9;
    friend bool operator==(const LayerConfig&, const LayerConfig&) = default;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::MatchMatrix;
    std::uint64_t seed = 1;
    std::vector<ObjectEntry> objects;
    std::vector<MatchBlock> blocks;
    OpticalParams optics{};
    ImagePlane image{};
    double capture_noise = 0.0;
    PoseGrid pose_grid{};
    AugmentConfig augmentation{};
    ClassifyConfig classify{};
    MatchConfig match{};
    RobustnessConfig robustness{};
    LayerConfig layer{};

    /// Objects after expanding `count`, in label order.
    std::vector<ObjectEntry> expanded_objects() const;
    void validate() const;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Defaults for each experiment kind (the analogs used by the acceptance suite).
ExperimentConfig default_config(ExperimentKind kind);

/// Parses a JSON config over default_config(kind). `spec_file` references are
/// resolved against base_dir and inlined. Throws ValidationError / FormatError.
ExperimentConfig config_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved config; config_from_json(config_to_json(c)) == c.
std::string config_to_json(const ExperimentConfig& config);

InfillSpec spec_from_json(std::string_view text);
std::string spec_to_json(const InfillSpec& spec);

/// Expands `count` replicas into single entries labelled <label>00, <label>01, ...
std::vector<ObjectEntry> expand_objects(const std::vector<ObjectEntry>& objects);

/// Object seed for position `index` in the expanded object list.
std::uint64_t object_seed(std::uint64_t master, std::size_t index);

// ---------------------------------------------------------------------------
// Results

struct AssertionResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

bool all_passed(const std::vector<AssertionResult>& assertions);

struct DatasetEntry {
    int object = 0;
    int gx = 0;
    int gy = 0;
    int rotation_index = 0;
    std::string file;
};

struct BuiltDataset {
    LabeledDataset data;
    std::vector<DatasetEntry> entries;
    std::vector<std::string> class_labels;
};

/// Renders every object at every grid pose; images are quantized to 16 bits so
/// the stored PGMs reproduce them exactly. Test split = `test_positions` grid
/// cells drawn from the Split stream, shared by all objects.
BuiltDataset build_dataset(const ExperimentConfig& config);
/// images/*.pgm plus reports/dataset.csv (file,label,split,object,gx,gy,rotation).
void write_dataset(const BuiltDataset& dataset, const std::filesystem::path& dir);
BuiltDataset read_dataset(const std::filesystem::path& dir);

struct BlockResult {
    std::string name;
    std::vector<MatchRateMatrix> replicates;
    double mean_off_diagonal = 0.0;
    double mean_far_pair = 0.0; ///< first vs last object, both directions
    double mean_diagonal = 0.0;
};

struct MatchExperimentResult {
    std::vector<BlockResult> blocks;
    std::vector<AssertionResult> assertions;
};

struct VariantResult {
    std::string name;
    AccuracyTrace trace;
    Evaluation test;
    Model model;
    std::string error; ///< set when training diverged
};

using VariantCallback = std::function<void(std::string_view variant, const EpochStats&)>;

struct ClassifyExperimentResult {
    VariantResult clean;
    VariantResult augmented;
    std::vector<AssertionResult> assertions;
};

struct RobustnessRow {
    std::string kind; ///< "translation_x", "translation_y", "rotation", "camera_x"
    double value = 0.0;
    double ncc_diffusion = 0.0;
    double ncc_no_diffusion = 0.0;
    bool image_changes = true; ///< undiffused image differs from the reference by more than 1e-12
};

struct RobustnessResult {
    std::vector<RobustnessRow> rows;
    std::vector<AssertionResult> assertions;
};

struct LayerRow {
    std::string parameter; ///< "thickness" or "mu_solid"
    double thickness = 0.0;
    double mu_solid = 0.0;
    double mean_intensity = 0.0;
    double closed_form = 0.0;
};

struct LayerSweepResult {
    std::vector<LayerRow> rows;
    std::vector<AssertionResult> assertions;
};

// Each run writes config.json, images/, reports/ and manifest.json under
// `out` (nothing is written when `out` is empty), plus timings.json. The
// manifest covers exactly the files written by that run.
MatchExperimentResult run_match_experiment(const ExperimentConfig& config, const std::filesystem::path& out = {});
ClassifyExperimentResult run_classify_experiment(const ExperimentConfig& config,
                                                 const std::filesystem::path& out = {},
                                                 const VariantCallback& progress = {});
RobustnessResult run_robustness_sweep(const ExperimentConfig& config, const std::filesystem::path& out = {});
LayerSweepResult run_layer_sweep(const ExperimentConfig& config, const std::filesystem::path& out = {});

/// Runs the experiment named by config.kind; returns its assertions.
std::vector<AssertionResult> run_experiment(const ExperimentConfig& config, const std::filesystem::path& out);

/// Manifest text for the given artifacts (paths relative to `dir`): tool
/// version, SHA-256 of the resolved config, and per-file size and SHA-256,
/// sorted by path. Timings are kept out so reruns compare byte for byte.
std::string manifest_json(const std::filesystem::path& dir, std::vector<std::string> files,
                          const std::string& config_json);

/// Row/column means used by the ordering assertions.
double off_diagonal_mean(const MatchRateMatrix& m);
double far_pair_mean(const MatchRateMatrix& m);

} // namespace transid
