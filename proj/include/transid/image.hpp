#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace transid {

/// Row-major grid of normalized intensities in [0, 1]. Row 0 is the top of the frame.
struct TransmissionImage {
    int width = 0;
    int height = 0;
    double pixel_pitch = 1.0; // mm per pixel
    std::vector<double> pixels;

    TransmissionImage() = default;
    TransmissionImage(int w, int h, double pitch, double fill = 0.0);

    double& at(int u, int v) { return pixels[static_cast<std::size_t>(v) * width + u]; }
    double at(int u, int v) const { return pixels[static_cast<std::size_t>(v) * width + u]; }
    std::size_t size() const { return pixels.size(); }

    void validate() const;
    double mean() const;
    double sum() const;
    friend bool operator==(const TransmissionImage&, const TransmissionImage&) = default;
};

/// Zero-mean normalized cross-correlation over all pixels; 1 for identical
/// images, 0 when either image is constant.
double normalized_cross_correlation(const TransmissionImage& a, const TransmissionImage& b);

/// Mean over the axis-aligned pixel window [u0, u1) x [v0, v1).
double window_mean(const TransmissionImage& img, int u0, int v0, int u1, int v1);

/// Snap every intensity onto the `bits`-deep grid used by PGM storage.
TransmissionImage quantize(const TransmissionImage& img, int bits);

// Binary PGM (P5). Stored value = round(intensity * (2^bits - 1)); 16-bit
// samples are big-endian. The pixel pitch travels in a
// `# transid pixel_pitch=<value>` comment.
std::string encode_pgm(const TransmissionImage& img, int bits = 16);
TransmissionImage decode_pgm(std::string_view bytes);
void write_pgm(const std::filesystem::path& path, const TransmissionImage& img, int bits = 16);
TransmissionImage read_pgm(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace transid
