#include "transid/classifier.hpp"

#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>

namespace transid {

// ---------------------------------------------------------------------------
// Model

void ModelConfig::validate() const
{
    if (num_classes < 2)
        throw ValidationError("num_classes must be >= 2");
    if (input_channels < 1 || stem_channels < 1 || head_channels < 1)
        throw ValidationError("channel counts must be positive");
    if (input_height < 4 || input_width < 4 || input_height % 4 != 0 || input_width % 4 != 0)
        throw ValidationError("input height and width must be positive multiples of 4");
}

std::vector<Tensor*> Model::parameters()
{
    return {&stem.weight, &stem.bias, &res1.weight, &res1.bias, &res2.weight,
            &res2.bias,   &head.weight, &head.bias, &fc.weight,   &fc.bias};
}

std::vector<const Tensor*> Model::parameters() const
{
    return {&stem.weight, &stem.bias, &res1.weight, &res1.bias, &res2.weight,
            &res2.bias,   &head.weight, &head.bias, &fc.weight,   &fc.bias};
}

std::size_t Model::parameter_count() const
{
    std::size_t n = 0;
    for (const Tensor* t : parameters())
        n += t->size();
    return n;
}

namespace {

Conv3x3 make_conv(int out, int in)
{
    return {Tensor({std::size_t(out), std::size_t(in), 3, 3}), Tensor({std::size_t(out)})};
}

std::size_t sz(int v)
{
    return static_cast<std::size_t>(v);
}

} // namespace

Model zero_model(const ModelConfig& config)
{
    config.validate();
    Model m;
    m.config = config;
    m.stem = make_conv(config.stem_channels, config.input_channels);
    m.res1 = make_conv(config.stem_channels, config.stem_channels);
    m.res2 = make_conv(config.stem_channels, config.stem_channels);
    m.head = make_conv(config.head_channels, config.stem_channels);
    m.fc = {Tensor({sz(config.num_classes), sz(config.dense_inputs())}), Tensor({sz(config.num_classes)})};
    return m;
}

Model init_model(const ModelConfig& config, std::uint64_t seed)
{
    Model m = zero_model(config);
    Rng rng(derive_seed(seed, Stream::Init));
    // conv gain sqrt(3): activation variance halves per ReLU layer, keeping the
    // output layer's inputs small relative to its fan-in
    auto fill = [&](Tensor& w, std::size_t fan_in, double gain) {
        const double bound = gain / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w.values)
            v = bound * (2.0 * rng.uniform() - 1.0);
    };
    const double relu_gain = std::sqrt(3.0);
    fill(m.stem.weight, sz(config.input_channels) * 9, relu_gain);
    fill(m.res1.weight, sz(config.stem_channels) * 9, relu_gain);
    fill(m.res2.weight, sz(config.stem_channels) * 9, relu_gain);
    fill(m.head.weight, sz(config.stem_channels) * 9, relu_gain);
    fill(m.fc.weight, sz(config.dense_inputs()), 1.0);
    return m;
}

// ---------------------------------------------------------------------------
// Layer kernels

namespace layers {

namespace {

using v4 = double __attribute__((vector_size(32)));

inline v4 load4(const double* p)
{
    v4 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store4(double* p, v4 v)
{
    std::memcpy(p, &v, sizeof v);
}

/// Copies (C, H, W) planes into (C, H+2, W+2) with a zero border.
void pad_planes(const double* in, int channels, int height, int width, std::vector<double>& out)
{
    const std::size_t pw = sz(width) + 2;
    const std::size_t plane = pw * (sz(height) + 2);
    out.assign(sz(channels) * plane, 0.0);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            std::memcpy(out.data() + sz(c) * plane + sz(y + 1) * pw + 1, in + (sz(c) * sz(height) + sz(y)) * sz(width),
                        sz(width) * sizeof(double));
}

/// out[o] (+)= sum_c sum_k w(o, c, k) * pad[c] shifted by tap k, where w(o, c, k)
/// is read through `weight_at`. One pass per output row; taps accumulate in registers.
template <typename WeightAt>
void correlate(const double* pad, int in_channels, int out_channels, int height, int width, WeightAt weight_at,
               double* out)
{
    const std::size_t pw = sz(width) + 2;
    const std::size_t plane = pw * (sz(height) + 2);
    for (int o = 0; o < out_channels; ++o)
        for (int c = 0; c < in_channels; ++c) {
            double w[9];
            for (int k = 0; k < 9; ++k)
                w[k] = weight_at(o, c, k);
            const double* src = pad + sz(c) * plane;
            for (int y = 0; y < height; ++y) {
                const double* r0 = src + sz(y) * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
                double* dst = out + (sz(o) * sz(height) + sz(y)) * sz(width);
                int x = 0;
                for (; x + 4 <= width; x += 4) {
                    v4 acc = load4(dst + x);
                    acc += w[0] * load4(r0 + x) + w[1] * load4(r0 + x + 1) + w[2] * load4(r0 + x + 2);
                    acc += w[3] * load4(r1 + x) + w[4] * load4(r1 + x + 1) + w[5] * load4(r1 + x + 2);
                    acc += w[6] * load4(r2 + x) + w[7] * load4(r2 + x + 1) + w[8] * load4(r2 + x + 2);
                    store4(dst + x, acc);
                }
                for (; x < width; ++x) {
                    double acc = dst[x];
                    acc += w[0] * r0[x] + w[1] * r0[x + 1] + w[2] * r0[x + 2];
                    acc += w[3] * r1[x] + w[4] * r1[x + 1] + w[5] * r1[x + 2];
                    acc += w[6] * r2[x] + w[7] * r2[x + 1] + w[8] * r2[x + 2];
                    dst[x] = acc;
                }
            }
        }
}

} // namespace

void conv3x3_forward(const double* in, int channels, int height, int width, const Conv3x3& conv, double* out)
{
    const int outs = static_cast<int>(conv.weight.dim(0));
    const std::size_t plane = sz(height) * sz(width);
    for (int o = 0; o < outs; ++o)
        std::fill(out + sz(o) * plane, out + sz(o + 1) * plane, conv.bias[sz(o)]);
    thread_local std::vector<double> pad;
    pad_planes(in, channels, height, width, pad);
    const double* w = conv.weight.data();
    correlate(
        pad.data(), channels, outs, height, width,
        [&](int o, int c, int k) { return w[(sz(o) * sz(channels) + sz(c)) * 9 + sz(k)]; }, out);
}

void conv3x3_backward(const double* in, int channels, int height, int width, const Conv3x3& conv,
                      const double* grad_out, double* grad_in, Conv3x3& grad)
{
    const int outs = static_cast<int>(conv.weight.dim(0));
    const std::size_t plane = sz(height) * sz(width);
    const std::size_t pw = sz(width) + 2;
    const std::size_t pplane = pw * (sz(height) + 2);

    for (int o = 0; o < outs; ++o) {
        const double* go = grad_out + sz(o) * plane;
        double acc[4] = {0.0, 0.0, 0.0, 0.0};
        std::size_t i = 0;
        for (; i + 4 <= plane; i += 4)
            for (int k = 0; k < 4; ++k)
                acc[k] += go[i + k];
        for (; i < plane; ++i)
            acc[0] += go[i];
        grad.bias[sz(o)] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }

    // weight gradient: correlation of the padded input with the output gradient
    thread_local std::vector<double> pad;
    pad_planes(in, channels, height, width, pad);
    for (int o = 0; o < outs; ++o) {
        const double* go = grad_out + sz(o) * plane;
        for (int c = 0; c < channels; ++c) {
            const double* src = pad.data() + sz(c) * pplane;
            v4 vacc[9] = {};
            double sacc[9] = {};
            for (int y = 0; y < height; ++y) {
                const double* r0 = src + sz(y) * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
                const double* g = go + sz(y) * sz(width);
                int x = 0;
                for (; x + 4 <= width; x += 4) {
                    const v4 gv = load4(g + x);
                    vacc[0] += gv * load4(r0 + x);
                    vacc[1] += gv * load4(r0 + x + 1);
                    vacc[2] += gv * load4(r0 + x + 2);
                    vacc[3] += gv * load4(r1 + x);
                    vacc[4] += gv * load4(r1 + x + 1);
                    vacc[5] += gv * load4(r1 + x + 2);
                    vacc[6] += gv * load4(r2 + x);
                    vacc[7] += gv * load4(r2 + x + 1);
                    vacc[8] += gv * load4(r2 + x + 2);
                }
                for (; x < width; ++x) {
                    const double gs = g[x];
                    sacc[0] += gs * r0[x];
                    sacc[1] += gs * r0[x + 1];
                    sacc[2] += gs * r0[x + 2];
                    sacc[3] += gs * r1[x];
                    sacc[4] += gs * r1[x + 1];
                    sacc[5] += gs * r1[x + 2];
                    sacc[6] += gs * r2[x];
                    sacc[7] += gs * r2[x + 1];
                    sacc[8] += gs * r2[x + 2];
                }
            }
            double* gw = grad.weight.data() + (sz(o) * sz(channels) + sz(c)) * 9;
            for (int k = 0; k < 9; ++k)
                gw[k] += ((vacc[k][0] + vacc[k][1]) + (vacc[k][2] + vacc[k][3])) + sacc[k];
        }
    }

    if (!grad_in)
        return;
    // input gradient: correlation of the padded output gradient with the flipped kernel
    thread_local std::vector<double> gpad;
    pad_planes(grad_out, outs, height, width, gpad);
    const double* w = conv.weight.data();
    correlate(
        gpad.data(), outs, channels, height, width,
        [&](int c, int o, int k) { return w[(sz(o) * sz(channels) + sz(c)) * 9 + sz(8 - k)]; }, grad_in);
}

void relu_inplace(std::span<double> x)
{
    for (double& v : x)
        v = v > 0.0 ? v : 0.0;
}

void maxpool2_forward(const double* in, int channels, int height, int width, double* out, int* arg)
{
    const int oh = height / 2;
    const int ow = width / 2;
    std::size_t k = 0;
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x, ++k) {
                const int base = (c * height + 2 * y) * width + 2 * x;
                const int cand[4] = {base, base + 1, base + width, base + width + 1};
                int best = cand[0];
                for (int j = 1; j < 4; ++j)
                    if (in[cand[j]] > in[best])
                        best = cand[j];
                out[k] = in[best];
                arg[k] = best;
            }
}

void maxpool2_backward(const double* grad_out, const int* arg, std::size_t n_out, double* grad_in)
{
    for (std::size_t k = 0; k < n_out; ++k)
        grad_in[arg[k]] += grad_out[k];
}

void dense_forward(const double* in, const Dense& fc, double* out)
{
    const std::size_t outs = fc.weight.dim(0);
    const std::size_t ins = fc.weight.dim(1);
    for (std::size_t o = 0; o < outs; ++o) {
        const double* w = fc.weight.data() + o * ins;
        double s = fc.bias[o];
        for (std::size_t i = 0; i < ins; ++i)
            s += w[i] * in[i];
        out[o] = s;
    }
}

void dense_backward(const double* in, const Dense& fc, const double* grad_out, double* grad_in, Dense& grad)
{
    const std::size_t outs = fc.weight.dim(0);
    const std::size_t ins = fc.weight.dim(1);
    for (std::size_t o = 0; o < outs; ++o) {
        const double g = grad_out[o];
        grad.bias[o] += g;
        double* gw = grad.weight.data() + o * ins;
        const double* w = fc.weight.data() + o * ins;
        for (std::size_t i = 0; i < ins; ++i)
            gw[i] += g * in[i];
        if (grad_in)
            for (std::size_t i = 0; i < ins; ++i)
                grad_in[i] += g * w[i];
    }
}

std::vector<double> residual_block(const double* in, int channels, int height, int width, const Conv3x3& conv1,
                                   const Conv3x3& conv2)
{
    const std::size_t n = sz(channels) * sz(height) * sz(width);
    std::vector<double> h(n), out(n);
    conv3x3_forward(in, channels, height, width, conv1, h.data());
    relu_inplace(h);
    conv3x3_forward(h.data(), channels, height, width, conv2, out.data());
    for (std::size_t i = 0; i < n; ++i)
        out[i] += in[i];
    relu_inplace(out);
    return out;
}

} // namespace layers

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

void check_batch(const Model& model, const Tensor& batch)
{
    batch.check_shape();
    const auto& c = model.config;
    if (batch.rank() != 4 || batch.dim(1) != sz(c.input_channels) || batch.dim(2) != sz(c.input_height) ||
        batch.dim(3) != sz(c.input_width))
        throw ShapeError("batch shape " + shape_string(batch.shape) + " does not match model input (N, " +
                         std::to_string(c.input_channels) + ", " + std::to_string(c.input_height) + ", " +
                         std::to_string(c.input_width) + ")");
}

void check_labels(const Model& model, std::size_t n, std::span<const int> labels)
{
    if (labels.size() != n)
        throw ShapeError("label count does not match batch size");
    for (int l : labels)
        if (l < 0 || l >= model.config.num_classes)
            throw ValidationError("label out of range");
}

void forward_sample(const Model& m, const double* x, SampleCache& c, double* logits)
{
    const auto& cfg = m.config;
    const int H = cfg.input_height, W = cfg.input_width;
    const int S = cfg.stem_channels, K = cfg.head_channels;
    const std::size_t full = sz(S) * sz(H) * sz(W);
    const std::size_t half = sz(S) * sz(H / 2) * sz(W / 2);
    const std::size_t head = sz(K) * sz(H / 2) * sz(W / 2);
    const std::size_t quarter = sz(K) * sz(H / 4) * sz(W / 4);

    c.input.assign(x, x + sz(cfg.input_channels) * sz(H) * sz(W));
    if (!m.input_mean.values.empty()) {
        const double inv = 1.0 / m.input_scale;
        for (std::size_t i = 0; i < c.input.size(); ++i)
            c.input[i] = (c.input[i] - m.input_mean[i]) * inv;
    }
    x = c.input.data();
    c.a0.resize(full);
    c.h1.resize(full);
    c.a1.resize(full);
    c.p1.resize(half);
    c.p1_arg.resize(half);
    c.c2.resize(head);
    c.p2.resize(quarter);
    c.p2_arg.resize(quarter);

    layers::conv3x3_forward(x, cfg.input_channels, H, W, m.stem, c.a0.data());
    layers::relu_inplace(c.a0);
    layers::conv3x3_forward(c.a0.data(), S, H, W, m.res1, c.h1.data());
    layers::relu_inplace(c.h1);
    layers::conv3x3_forward(c.h1.data(), S, H, W, m.res2, c.a1.data());
    for (std::size_t i = 0; i < full; ++i)
        c.a1[i] += c.a0[i];
    layers::relu_inplace(c.a1);
    layers::maxpool2_forward(c.a1.data(), S, H, W, c.p1.data(), c.p1_arg.data());
    layers::conv3x3_forward(c.p1.data(), S, H / 2, W / 2, m.head, c.c2.data());
    layers::relu_inplace(c.c2);
    layers::maxpool2_forward(c.c2.data(), K, H / 2, W / 2, c.p2.data(), c.p2_arg.data());
    layers::dense_forward(c.p2.data(), m.fc, logits);
}

void backward_sample(const Model& m, const SampleCache& c, const double* dlogits, Model& g)
{
    const auto& cfg = m.config;
    const int H = cfg.input_height, W = cfg.input_width;
    const int S = cfg.stem_channels;
    const std::size_t full = c.a1.size();

    std::vector<double> dp2(c.p2.size(), 0.0);
    layers::dense_backward(c.p2.data(), m.fc, dlogits, dp2.data(), g.fc);

    std::vector<double> dc2(c.c2.size(), 0.0);
    layers::maxpool2_backward(dp2.data(), c.p2_arg.data(), dp2.size(), dc2.data());
    for (std::size_t i = 0; i < dc2.size(); ++i)
        if (!(c.c2[i] > 0.0))
            dc2[i] = 0.0;

    std::vector<double> dp1(c.p1.size(), 0.0);
    layers::conv3x3_backward(c.p1.data(), S, H / 2, W / 2, m.head, dc2.data(), dp1.data(), g.head);

    std::vector<double> dr(full, 0.0);
    layers::maxpool2_backward(dp1.data(), c.p1_arg.data(), dp1.size(), dr.data());
    for (std::size_t i = 0; i < full; ++i)
        if (!(c.a1[i] > 0.0))
            dr[i] = 0.0;

    // the skip path carries dr straight to a0
    std::vector<double> da0 = dr;
    std::vector<double> dh1(full, 0.0);
    layers::conv3x3_backward(c.h1.data(), S, H, W, m.res2, dr.data(), dh1.data(), g.res2);
    for (std::size_t i = 0; i < full; ++i)
        if (!(c.h1[i] > 0.0))
            dh1[i] = 0.0;
    layers::conv3x3_backward(c.a0.data(), S, H, W, m.res1, dh1.data(), da0.data(), g.res1);
    for (std::size_t i = 0; i < full; ++i)
        if (!(c.a0[i] > 0.0))
            da0[i] = 0.0;
    layers::conv3x3_backward(c.input.data(), cfg.input_channels, H, W, m.stem, da0.data(), nullptr, g.stem);
}

} // namespace

Tensor softmax(const Tensor& logits)
{
    Tensor p = logits;
    const std::size_t n = logits.dim(0);
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < n; ++r) {
        double* row = p.data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (std::size_t j = 0; j < k; ++j)
            row[j] /= s;
    }
    return p;
}

ForwardResult forward(const Model& model, const Tensor& batch, bool keep_cache)
{
    check_batch(model, batch);
    const std::size_t n = batch.dim(0);
    const std::size_t k = sz(model.config.num_classes);
    const std::size_t per = batch.dim(1) * batch.dim(2) * batch.dim(3);

    ForwardResult r;
    r.logits = Tensor({n, k});
    SampleCache scratch;
    if (keep_cache)
        r.cache.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        forward_sample(model, batch.data() + i * per, keep_cache ? r.cache[i] : scratch, r.logits.data() + i * k);
    r.logits.check_finite("logits");
    r.probabilities = softmax(r.logits);
    return r;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    const std::size_t n = logits.dim(0);
    const std::size_t k = logits.dim(1);
    if (labels.size() != n)
        throw ShapeError("label count does not match batch size");
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.data() + r * k;
        const double mx = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            s += std::exp(row[j] - mx);
        total += (mx + std::log(s)) - row[labels[r]];
    }
    return total / static_cast<double>(n);
}

Model backward(const Model& model, const ForwardResult& fwd, std::span<const int> labels)
{
    const std::size_t n = fwd.logits.dim(0);
    const std::size_t k = fwd.logits.dim(1);
    check_labels(model, n, labels);
    if (fwd.cache.size() != n)
        throw ValidationError("backward needs the forward cache");
    Model g = zero_model(model.config);
    std::vector<double> dlogits(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j)
            dlogits[j] = (fwd.probabilities[i * k + j] - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) * inv_n;
        backward_sample(model, fwd.cache[i], dlogits.data(), g);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Data

std::vector<std::size_t> LabeledDataset::indices(Split which) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == which)
            out.push_back(i);
    return out;
}

void LabeledDataset::validate() const
{
    if (num_classes < 2)
        throw ValidationError("dataset needs at least two classes");
    if (images.size() != labels.size() || images.size() != split.size())
        throw ValidationError("dataset images, labels and split differ in length");
    std::vector<int> train(sz(num_classes), 0), test(sz(num_classes), 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw ValidationError("dataset label out of range");
        if (images[i].width != images.front().width || images[i].height != images.front().height)
            throw ValidationError("dataset images differ in size");
        (split[i] == Split::Train ? train : test)[sz(labels[i])]++;
    }
    for (int c = 0; c < num_classes; ++c)
        if (train[sz(c)] == 0 || test[sz(c)] == 0)
            throw ValidationError("class " + std::to_string(c) + " lacks a train or test sample");
}

namespace {

void standardize_into(const TransmissionImage& img, double* dst)
{
    const double mean = img.mean();
    double var = 0.0;
    for (double v : img.pixels)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(img.pixels.size());
    const double inv = 1.0 / std::max(std::sqrt(var), 1e-6);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        dst[i] = (img.pixels[i] - mean) * inv;
}

} // namespace

Tensor prepare_batch(std::span<const TransmissionImage> images)
{
    if (images.empty())
        return Tensor({0, 1, 0, 0});
    const auto h = sz(images.front().height);
    const auto w = sz(images.front().width);
    Tensor t({images.size(), 1, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (sz(images[i].height) != h || sz(images[i].width) != w)
            throw ShapeError("batch images differ in size");
        standardize_into(images[i], t.data() + i * h * w);
    }
    return t;
}

Tensor prepare_batch(const LabeledDataset& data, std::span<const std::size_t> indices)
{
    if (indices.empty())
        return Tensor({0, 1, 0, 0});
    const auto h = sz(data.images[indices.front()].height);
    const auto w = sz(data.images[indices.front()].width);
    Tensor t({indices.size(), 1, h, w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& img = data.images.at(indices[i]);
        if (sz(img.height) != h || sz(img.width) != w)
            throw ShapeError("batch images differ in size");
        standardize_into(img, t.data() + i * h * w);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const
{
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ValidationError("momentum must lie in [0, 1)");
    if (batch_size < 1)
        throw ValidationError("batch_size must be >= 1");
    if (epochs < 0)
        throw ValidationError("epochs must be >= 0");
}

namespace {

std::string fmt(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, r.ptr};
}

int argmax_row(const double* row, std::size_t k)
{
    return static_cast<int>(std::max_element(row, row + k) - row);
}

} // namespace

std::string AccuracyTrace::to_csv() const
{
    std::string out = "epoch,train_loss,train_acc,test_acc\n";
    for (const auto& e : epochs)
        out += std::to_string(e.epoch) + ',' + fmt(e.train_loss) + ',' + fmt(e.train_acc) + ',' + fmt(e.test_acc) +
               '\n';
    return out;
}

AccuracyTrace AccuracyTrace::from_csv(std::string_view csv)
{
    AccuracyTrace t;
    bool header = true;
    while (!csv.empty()) {
        const auto nl = csv.find('\n');
        const std::string_view line = csv.substr(0, nl);
        csv = nl == std::string_view::npos ? std::string_view{} : csv.substr(nl + 1);
        if (line.empty())
            continue;
        if (header) {
            if (line != "epoch,train_loss,train_acc,test_acc")
                throw FormatError("trace CSV: unexpected header");
            header = false;
            continue;
        }
        double v[4];
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int i = 0; i < 4; ++i) {
            const auto r = std::from_chars(p, end, v[i]);
            if (r.ec != std::errc{} || (i < 3 && (r.ptr == end || *r.ptr != ',')))
                throw FormatError("trace CSV: malformed row");
            p = r.ptr + 1;
        }
        t.epochs.push_back({static_cast<int>(v[0]), v[1], v[2], v[3]});
    }
    return t;
}

double sgd_step(Model& model, const Tensor& batch, std::span<const int> labels, double learning_rate)
{
    const ForwardResult fwd = forward(model, batch);
    const double loss = cross_entropy(fwd.logits, labels);
    const Model g = backward(model, fwd, labels);
    auto params = model.parameters();
    auto grads = g.parameters();
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t]->size(); ++i)
            (*params[t])[i] -= learning_rate * (*grads[t])[i];
    return loss;
}

void fit_input_normalization(Model& model, const LabeledDataset& data)
{
    const std::vector<std::size_t> train_idx = data.indices(Split::Train);
    if (train_idx.empty())
        throw ValidationError("input normalization needs training images");
    const auto& c = model.config;
    const std::size_t per = sz(c.input_channels) * sz(c.input_height) * sz(c.input_width);
    constexpr std::size_t chunk = 256;
    std::vector<double> sum(per, 0.0);
    for (std::size_t s = 0; s < train_idx.size(); s += chunk) {
        const std::size_t e = std::min(train_idx.size(), s + chunk);
        const Tensor b = prepare_batch(data, std::span<const std::size_t>(train_idx.data() + s, e - s));
        if (b.dim(1) * b.dim(2) * b.dim(3) != per)
            throw ShapeError("training images do not match the model input");
        for (std::size_t n = 0; n < e - s; ++n)
            for (std::size_t i = 0; i < per; ++i)
                sum[i] += b.data()[n * per + i];
    }
    Tensor mean({sz(c.input_channels), sz(c.input_height), sz(c.input_width)});
    for (std::size_t i = 0; i < per; ++i)
        mean[i] = sum[i] / static_cast<double>(train_idx.size());
    double sq = 0.0;
    for (std::size_t s = 0; s < train_idx.size(); s += chunk) {
        const std::size_t e = std::min(train_idx.size(), s + chunk);
        const Tensor b = prepare_batch(data, std::span<const std::size_t>(train_idx.data() + s, e - s));
        for (std::size_t n = 0; n < e - s; ++n)
            for (std::size_t i = 0; i < per; ++i) {
                const double d = b.data()[n * per + i] - mean[i];
                sq += d * d;
            }
    }
    model.input_mean = std::move(mean);
    model.input_scale = std::max(std::sqrt(sq / static_cast<double>(train_idx.size() * per)), 1e-12);
}

TrainResult train(const Model& initial, const LabeledDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
    cfg.validate();
    data.validate();
    if (data.num_classes != initial.config.num_classes)
        throw ValidationError("dataset class count does not match the model");

    TrainResult result{initial, {}};
    Model& model = result.model;
    if (model.input_mean.values.empty())
        fit_input_normalization(model, data);
    Model velocity = zero_model(model.config);
    auto params = model.parameters();
    auto vel = velocity.parameters();

    std::vector<std::size_t> order = data.indices(Split::Train);
    const std::size_t bs = sz(cfg.batch_size);
    const std::size_t k = sz(model.config.num_classes);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, Stream::Shuffle, sz(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            const std::span<const std::size_t> idx(order.data() + start, stop - start);
            const Tensor batch = prepare_batch(data, idx);
            std::vector<int> labels(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j)
                labels[j] = data.labels[idx[j]];

            const ForwardResult fwd = forward(model, batch);
            const double loss = cross_entropy(fwd.logits, labels);
            if (!std::isfinite(loss))
                throw DivergenceError("training loss became non-finite in epoch " + std::to_string(epoch + 1));
            loss_sum += loss * static_cast<double>(idx.size());
            for (std::size_t j = 0; j < idx.size(); ++j)
                if (argmax_row(fwd.logits.data() + j * k, k) == labels[j])
                    ++correct;

            const Model g = backward(model, fwd, labels);
            const auto grads = g.parameters();
            for (std::size_t t = 0; t < params.size(); ++t) {
                double* p = params[t]->data();
                double* v = vel[t]->data();
                const double* gr = grads[t]->data();
                for (std::size_t i = 0; i < params[t]->size(); ++i) {
                    v[i] = cfg.momentum * v[i] + gr[i];
                    p[i] -= cfg.learning_rate * v[i];
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        stats.test_acc = evaluate(model, data, Split::Test).accuracy;
        result.trace.epochs.push_back(stats);
        if (on_epoch)
            on_epoch(stats);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<int> predict(const Model& model, const Tensor& batch)
{
    const ForwardResult fwd = forward(model, batch, false);
    const std::size_t n = fwd.logits.dim(0);
    const std::size_t k = fwd.logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = argmax_row(fwd.logits.data() + i * k, k);
    return out;
}

namespace {

Evaluation tally(const Model& model, std::size_t n, const std::function<Tensor(std::size_t, std::size_t)>& batch_of,
                 const std::function<int(std::size_t)>& label_of)
{
    const std::size_t k = sz(model.config.num_classes);
    Evaluation e;
    e.confusion.assign(k, std::vector<long>(k, 0));
    e.total = n;
    constexpr std::size_t chunk = 64;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t stop = std::min(n, start + chunk);
        const auto pred = predict(model, batch_of(start, stop));
        for (std::size_t i = start; i < stop; ++i) {
            const int truth = label_of(i);
            if (truth < 0 || sz(truth) >= k)
                throw ValidationError("label out of range");
            e.confusion[sz(truth)][sz(pred[i - start])]++;
            if (pred[i - start] == truth)
                ++correct;
        }
    }
    e.accuracy = n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
    return e;
}

} // namespace

Evaluation evaluate(const Model& model, const LabeledDataset& data, Split which)
{
    const auto idx = data.indices(which);
    return tally(
        model, idx.size(),
        [&](std::size_t a, std::size_t b) {
            return prepare_batch(data, std::span<const std::size_t>(idx.data() + a, b - a));
        },
        [&](std::size_t i) { return data.labels[idx[i]]; });
}

Evaluation evaluate(const Model& model, std::span<const TransmissionImage> images, std::span<const int> labels)
{
    if (images.size() != labels.size())
        throw ShapeError("label count does not match image count");
    return tally(
        model, images.size(), [&](std::size_t a, std::size_t b) { return prepare_batch(images.subspan(a, b - a)); },
        [&](std::size_t i) { return labels[i]; });
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr char kMagic[4] = {'T', 'I', 'D', 'M'};
constexpr std::uint32_t kVersion = 2;

template <typename T>
void put(std::string& out, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        out.append(bytes.data(), bytes.size());
    } else {
        char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        out.append(bytes, sizeof(T));
    }
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    template <typename T>
    T get()
    {
        if (bytes.size() - pos < sizeof(T))
            throw FormatError("model file truncated");
        std::array<char, sizeof(T)> raw;
        std::memcpy(raw.data(), bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(raw.begin(), raw.end());
        return std::bit_cast<T>(raw);
    }
};

} // namespace

std::string serialize_model(const Model& model)
{
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    const auto& c = model.config;
    for (int v : {c.input_height, c.input_width, c.input_channels, c.stem_channels, c.head_channels, c.num_classes})
        put<std::int32_t>(out, v);
    const auto params = model.parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const Tensor* t : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
        for (std::size_t d : t->shape)
            put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : t->values)
            put<double>(out, v);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_mean.size()));
    for (double v : model.input_mean.values)
        put<double>(out, v);
    put<double>(out, model.input_scale);
    return out;
}

Model deserialize_model(std::string_view bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("not a transid model file");
    Reader r{bytes, 4};
    if (r.get<std::uint32_t>() != kVersion)
        throw FormatError("unsupported model file version");
    ModelConfig c;
    c.input_height = r.get<std::int32_t>();
    c.input_width = r.get<std::int32_t>();
    c.input_channels = r.get<std::int32_t>();
    c.stem_channels = r.get<std::int32_t>();
    c.head_channels = r.get<std::int32_t>();
    c.num_classes = r.get<std::int32_t>();
    Model m = zero_model(c);
    auto params = m.parameters();
    if (r.get<std::uint32_t>() != params.size())
        throw FormatError("model file has the wrong tensor count");
    for (Tensor* t : params) {
        const auto rank = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape)
            d = r.get<std::uint32_t>();
        if (shape != t->shape)
            throw FormatError("model tensor shape " + shape_string(shape) + " does not match config, expected " +
                              shape_string(t->shape));
        for (double& v : t->values)
            v = r.get<double>();
    }
    const auto norm_count = r.get<std::uint32_t>();
    if (norm_count != 0) {
        if (norm_count != sz(c.input_channels) * sz(c.input_height) * sz(c.input_width))
            throw FormatError("model input normalization has the wrong size");
        m.input_mean = Tensor({sz(c.input_channels), sz(c.input_height), sz(c.input_width)});
        for (double& v : m.input_mean.values)
            v = r.get<double>();
    }
    m.input_scale = r.get<double>();
    if (!(m.input_scale > 0.0) || !std::isfinite(m.input_scale))
        throw FormatError("model input scale must be positive");
    if (r.pos != bytes.size())
        throw FormatError("trailing bytes in model file");
    return m;
}

void save_model(const std::filesystem::path& path, const Model& model)
{
    write_file(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path)
{
    return deserialize_model(read_file(path));
}

} // namespace transid
