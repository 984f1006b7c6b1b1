#pragma once

#include "transid/image.hpp"
#include "transid/render.hpp"
#include "transid/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace transid {

/// stem conv3x3(C->stem) + ReLU, residual block relu(conv(relu(conv(x))) + x),
/// maxpool 2x2, conv3x3(stem->head) + ReLU, maxpool 2x2, dense -> classes.
/// All convolutions use stride 1 and zero padding 1.
struct ModelConfig {
    int input_height = 64;
    int input_width = 64;
    int input_channels = 1;
    int stem_channels = 8;
    int head_channels = 16;
    int num_classes = 10;

    void validate() const;
    int dense_inputs() const { return head_channels * (input_height / 4) * (input_width / 4); }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Convolution weight (out, in, 3, 3) and bias (out).
struct Conv3x3 {
    Tensor weight;
    Tensor bias;
    friend bool operator==(const Conv3x3&, const Conv3x3&) = default;
};

/// Dense weight (out, in) and bias (out).
struct Dense {
    Tensor weight;
    Tensor bias;
    friend bool operator==(const Dense&, const Dense&) = default;
};

struct Model {
    ModelConfig config;
    Conv3x3 stem;
    Conv3x3 res1;
    Conv3x3 res2;
    Conv3x3 head;
    Dense fc;
    /// Per-pixel input centering applied before the stem: x -> (x - input_mean) / input_scale.
    /// Not trained; empty input_mean means identity. train() fits it on the
    /// training split when the initial model has none.
    Tensor input_mean;
    double input_scale = 1.0;

    /// Every trainable parameter tensor in serialization order.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::size_t parameter_count() const;

    friend bool operator==(const Model&, const Model&) = default;
};

/// All-zero parameters of the right shapes.
Model zero_model(const ModelConfig& config);
/// Weights uniform in +-gain/sqrt(fan_in) from the Init stream (gain sqrt(3) for
/// convolutions, 1 for the output layer), zero biases.
Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Per-sample activations retained for backward().
struct SampleCache {
    std::vector<double> input;
    std::vector<double> a0;   ///< relu(stem)
    std::vector<double> h1;   ///< relu(res1)
    std::vector<double> a1;   ///< relu(res2 + a0)
    std::vector<double> p1;   ///< pool(a1)
    std::vector<int> p1_arg;
    std::vector<double> c2;   ///< relu(head)
    std::vector<double> p2;   ///< pool(c2)
    std::vector<int> p2_arg;
};

struct ForwardResult {
    Tensor logits;        ///< (N, classes)
    Tensor probabilities; ///< (N, classes), rows sum to 1
    std::vector<SampleCache> cache;
};

/// batch has shape (N, C, H, W) matching the config; throws ShapeError otherwise.
ForwardResult forward(const Model& model, const Tensor& batch, bool keep_cache = true);

/// Mean cross-entropy of the batch, computed from logits.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Gradients of mean cross-entropy, returned in a Model of the same shapes.
Model backward(const Model& model, const ForwardResult& fwd, std::span<const int> labels);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

/// Single-sample layer kernels on channel-major (C, H, W) buffers, exposed for testing.
namespace layers {
void conv3x3_forward(const double* in, int channels, int height, int width, const Conv3x3& conv, double* out);
/// Accumulates into grad_in (when non-null) and into the parameter gradients.
void conv3x3_backward(const double* in, int channels, int height, int width, const Conv3x3& conv,
                      const double* grad_out, double* grad_in, Conv3x3& grad);
void relu_inplace(std::span<double> x);
/// Output (C, H/2, W/2); arg holds the flat input index of each maximum (first in scan order).
void maxpool2_forward(const double* in, int channels, int height, int width, double* out, int* arg);
void maxpool2_backward(const double* grad_out, const int* arg, std::size_t n_out, double* grad_in);
void dense_forward(const double* in, const Dense& fc, double* out);
void dense_backward(const double* in, const Dense& fc, const double* grad_out, double* grad_in, Dense& grad);
/// relu(conv2(relu(conv1(x))) + x) for a block whose convolutions keep the channel count.
std::vector<double> residual_block(const double* in, int channels, int height, int width, const Conv3x3& conv1,
                                   const Conv3x3& conv2);
} // namespace layers

// ---------------------------------------------------------------------------
// Data, training and evaluation

enum class Split { Train, Test };

struct LabeledDataset {
    std::vector<TransmissionImage> images;
    std::vector<int> labels;
    std::vector<Split> split;
    int num_classes = 0;
    std::string provenance;

    std::size_t size() const { return images.size(); }
    std::vector<std::size_t> indices(Split which) const;
    /// Every class has a train and a test sample; image sizes agree; labels in range.
    void validate() const;
};

/// Stacks the selected images into (N, 1, H, W), each standardized to zero mean and unit variance.
Tensor prepare_batch(const LabeledDataset& data, std::span<const std::size_t> indices);
Tensor prepare_batch(std::span<const TransmissionImage> images);

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 30;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct AccuracyTrace {
    std::vector<EpochStats> epochs;

    std::string to_csv() const;
    static AccuracyTrace from_csv(std::string_view csv);
};

struct TrainResult {
    Model model;
    AccuracyTrace trace;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// SGD with momentum (v = m v + g; p -= lr v), a seeded shuffle per epoch and
/// a fixed reduction order. Throws DivergenceError when the loss turns NaN.
TrainResult train(const Model& initial, const LabeledDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Sets input_mean to the per-pixel mean of the prepared training images and
/// input_scale to the RMS of the centered values.
void fit_input_normalization(Model& model, const LabeledDataset& data);

/// One plain SGD step on a batch; returns the loss before the step.
double sgd_step(Model& model, const Tensor& batch, std::span<const int> labels, double learning_rate);

struct Evaluation {
    double accuracy = 0.0;
    std::vector<std::vector<long>> confusion; ///< [true][predicted]
    std::size_t total = 0;
};

std::vector<int> predict(const Model& model, const Tensor& batch);
Evaluation evaluate(const Model& model, const LabeledDataset& data, Split which);
Evaluation evaluate(const Model& model, std::span<const TransmissionImage> images, std::span<const int> labels);

/// Little-endian binary: "TIDM", u32 version, six i32 config fields, u32
/// tensor count, then per tensor u32 rank, u32 dims and f64 values.
std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentSpec {
    std::vector<double> rotations_deg; ///< 0 entries produce no image
    bool add_noise = false;
    NoiseModel noise{};
};

/// Bilinear rotation about the image centre; source coordinates clamp to the edge.
TransmissionImage rotate_image(const TransmissionImage& img, double degrees);

/// The original, one image per nonzero rotation, then one noisy copy of the original.
std::vector<TransmissionImage> augment(const TransmissionImage& img, const AugmentSpec& spec);

/// Applies augment() to every image; each output keeps its source label and split.
/// Noise seeds are derived from spec.noise.seed and the image index.
LabeledDataset augment_dataset(const LabeledDataset& data, const AugmentSpec& spec);

} // namespace transid
