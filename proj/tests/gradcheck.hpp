#pragma once

// Finite-difference check of backward() against the mean cross-entropy.
// The loss is piecewise smooth: ReLU signs and max-pool winners select the
// piece. A difference quotient is only meaningful when every stencil point
// lies on the same piece as the base point, so the activation pattern is
// compared at each of them and crossings are counted instead of scored.

#include "transid/classifier.hpp"
#include "transid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

struct GradCheck {
    double worst_relative = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0;       ///< stencil crossed a ReLU or pool boundary even at the smallest step
    std::size_t zero_gradient = 0; ///< analytic exactly 0, numeric within roundoff of 0
};

/// Reduced network on 4x4 inputs. Zero biases are replaced by small random
/// values so that every parameter carries a nonzero gradient.
inline transid::Model gradcheck_model(std::uint64_t seed, int classes = 3)
{
    transid::ModelConfig mc;
    mc.input_height = 4;
    mc.input_width = 4;
    mc.num_classes = classes;
    transid::Model m = transid::init_model(mc, seed);
    transid::Rng rng(seed ^ 0x5bd1e995ull);
    for (auto* t : m.parameters())
        for (double& v : t->values)
            if (v == 0.0)
                v = 0.1 * rng.gaussian();
    return m;
}

inline transid::Tensor random_batch(std::size_t n, int channels, int h, int w, std::uint64_t seed)
{
    transid::Tensor x({n, static_cast<std::size_t>(channels), static_cast<std::size_t>(h),
                       static_cast<std::size_t>(w)});
    transid::Rng rng(seed);
    for (double& v : x.values)
        v = rng.gaussian();
    return x;
}

/// ReLU signs and pool winners of every sample.
inline std::vector<int> activation_pattern(const transid::ForwardResult& f)
{
    std::vector<int> p;
    for (const auto& c : f.cache) {
        for (const auto* a : {&c.a0, &c.h1, &c.a1, &c.c2})
            for (double v : *a)
                p.push_back(v > 0.0);
        p.insert(p.end(), c.p1_arg.begin(), c.p1_arg.end());
        p.insert(p.end(), c.p2_arg.begin(), c.p2_arg.end());
    }
    return p;
}

/// Fourth-order central differences. The step starts at 1e-3 and shrinks
/// tenfold while the stencil leaves the base point's smooth piece. An exactly
/// zero analytic gradient (dead unit) agrees with a numeric value inside the
/// stencil's roundoff floor; every other pair is scored by relative error.
inline GradCheck gradient_check(transid::Model m, const transid::Tensor& x, const std::vector<int>& y)
{
    const transid::ForwardResult base = transid::forward(m, x);
    const std::vector<int> pattern = activation_pattern(base);
    const transid::Model g = transid::backward(m, base, y);
    auto params = m.parameters();
    const auto grads = g.parameters();
    GradCheck out;
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t]->size(); ++i) {
            double& p = (*params[t])[i];
            const double orig = p;
            const double analytic = (*grads[t])[i];
            ++out.checked;
            bool smooth = false;
            for (double h = 1e-3; h >= 1e-6 && !smooth; h /= 10.0) {
                double f[4];
                smooth = true;
                const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
                for (int k = 0; k < 4; ++k) {
                    p = orig + offsets[k] * h;
                    const transid::ForwardResult r = transid::forward(m, x);
                    smooth = smooth && activation_pattern(r) == pattern;
                    f[k] = transid::cross_entropy(r.logits, y);
                }
                p = orig;
                if (!smooth)
                    continue;
                const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
                // a few ulps of the loss per evaluation, through the stencil weights
                const double floor = 8.0 * 2.220446049250313e-16 * std::max(std::abs(f[1]), std::abs(f[2])) / h;
                if (analytic == 0.0 && std::abs(numeric) <= floor) {
                    ++out.zero_gradient;
                    continue;
                }
                const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-300});
                out.worst_relative = std::max(out.worst_relative, std::abs(analytic - numeric) / scale);
            }
            if (!smooth)
                ++out.kinks;
        }
    return out;
}

} // namespace oracle
