#pragma once

#include "transid/image.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace transid {

/// Summed-area table with a zero first row and column: (W+1) x (H+1) entries.
class IntegralImage {
public:
    IntegralImage() = default;
    explicit IntegralImage(const TransmissionImage& img);

    int width() const { return width_; }
    int height() const { return height_; }

    /// Table entry (i, j) = sum of pixels with u < i and v < j.
    double at(int i, int j) const { return table_[static_cast<std::size_t>(j) * (width_ + 1) + i]; }

    /// Sum over pixels [u0, u1) x [v0, v1), bounds clamped to the image.
    double box_sum(int u0, int v0, int u1, int v1) const;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> table_;
};

IntegralImage integral_image(const TransmissionImage& img);

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double scale = 0.0;
    double response = 0.0;
    int laplacian_sign = 1;
};

using Descriptor = std::array<double, 64>;

struct DetectorParams {
    double threshold = 2e-5;
    int octaves = 4;
    int init_sample = 1;
    friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

/// Box-filter side length for (octave, interval): 9, 15, 21, 27; 15, 27, 39, 51; ...
int hessian_filter_size(int octave, int interval);

/// Scale-normalized determinant-of-Hessian at (u, v) for one box-filter size;
/// nullopt where the filter does not fit inside the image.
struct HessianSample {
    double det;
    double trace;
};
std::optional<HessianSample> hessian_response(const IntegralImage& ii, int u, int v, int filter_size);

/// Fast-Hessian detection: 3x3x3 non-maximum suppression in each octave,
/// quadratic refinement, sorted by descending response.
std::vector<Keypoint> detect_keypoints(const TransmissionImage& img, const DetectorParams& params = {});

struct FeatureSet {
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;
};

/// Upright 64-d SURF descriptors; keypoints whose patch is flat are dropped.
FeatureSet describe(const TransmissionImage& img, std::span<const Keypoint> keypoints);
FeatureSet describe(const IntegralImage& ii, std::span<const Keypoint> keypoints);

/// detect_keypoints followed by describe.
FeatureSet extract_features(const TransmissionImage& img, const DetectorParams& params = {});

double descriptor_distance(const Descriptor& a, const Descriptor& b);

struct KnnMatch {
    std::size_t ref_idx = 0;
    std::size_t best_idx = 0;
    double d1 = 0.0;
    std::optional<std::size_t> second_idx;
    double d2 = 0.0; ///< +inf when second_idx is absent
};

/// Two nearest targets per reference by exhaustive search; ties go to the lower index.
std::vector<KnnMatch> match_knn(std::span<const Descriptor> ref, std::span<const Descriptor> target);

/// Keeps d1 < ratio * d2. With d2 == 0 an entry survives iff d1 == 0; entries
/// without a second neighbour are rejected. Input order is preserved.
std::vector<KnnMatch> ratio_test(std::span<const KnnMatch> matches, double ratio);

struct MatchParams {
    DetectorParams detector{};
    double ratio = 0.7;
};

/// Survivor counts per (reference, target) pair. total[i][j] is the number
/// of described keypoints in reference i.
struct MatchRateMatrix {
    std::vector<std::string> ref_labels;
    std::vector<std::string> target_labels;
    std::vector<std::vector<long>> matched;
    std::vector<std::vector<long>> total;

    double rate(std::size_t i, std::size_t j) const;
    std::string to_csv() const;
    std::string to_json() const;
    static MatchRateMatrix from_csv(std::string_view csv);
};

/// Square matrix over one image list; the diagonal compares each image with itself.
MatchRateMatrix match_rate_matrix(std::span<const TransmissionImage> images, std::span<const std::string> labels,
                                  const MatchParams& params);
MatchRateMatrix match_rate_matrix(std::span<const FeatureSet> features, std::span<const std::string> labels,
                                  double ratio);

/// Rectangular variant: references against targets.
MatchRateMatrix match_rate_matrix(std::span<const TransmissionImage> refs, std::span<const std::string> ref_labels,
                                  std::span<const TransmissionImage> targets,
                                  std::span<const std::string> target_labels, const MatchParams& params);

} // namespace transid
