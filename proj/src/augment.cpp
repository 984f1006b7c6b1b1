#include "transid/classifier.hpp"

#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace transid {

TransmissionImage rotate_image(const TransmissionImage& img, double degrees)
{
    img.validate();
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    const double cx = 0.5 * (img.width - 1);
    const double cy = 0.5 * (img.height - 1);
    TransmissionImage out(img.width, img.height, img.pixel_pitch);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < img.width; ++u) {
            // inverse map: output pixel -> source position
            const double dx = u - cx;
            const double dy = v - cy;
            const double sx = std::clamp(cx + c * dx + s * dy, 0.0, img.width - 1.0);
            const double sy = std::clamp(cy - s * dx + c * dy, 0.0, img.height - 1.0);
            const int x0 = std::min(static_cast<int>(sx), std::max(img.width - 2, 0));
            const int y0 = std::min(static_cast<int>(sy), std::max(img.height - 2, 0));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const double fx = sx - x0;
            const double fy = sy - y0;
            const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
            const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
            out.at(u, v) = std::clamp(top * (1.0 - fy) + bot * fy, 0.0, 1.0);
        }
    return out;
}

std::vector<TransmissionImage> augment(const TransmissionImage& img, const AugmentSpec& spec)
{
    img.validate();
    std::vector<TransmissionImage> out{img};
    for (double deg : spec.rotations_deg) {
        if (!std::isfinite(deg))
            throw ValidationError("rotation angles must be finite");
        if (deg != 0.0)
            out.push_back(rotate_image(img, deg));
    }
    if (spec.add_noise)
        out.push_back(add_noise(img, spec.noise));
    return out;
}

LabeledDataset augment_dataset(const LabeledDataset& data, const AugmentSpec& spec)
{
    LabeledDataset out;
    out.num_classes = data.num_classes;
    out.provenance = data.provenance + (data.provenance.empty() ? "" : "; ") + "augmented";
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        AugmentSpec local = spec;
        local.noise.seed = derive_seed(spec.noise.seed, Stream::Augment, i);
        for (auto& img : augment(data.images[i], local)) {
            out.images.push_back(std::move(img));
            out.labels.push_back(data.labels[i]);
            out.split.push_back(data.split[i]);
        }
    }
    return out;
}

} // namespace transid
