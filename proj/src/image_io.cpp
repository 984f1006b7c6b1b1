#include "transid/image.hpp"

#include "transid/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>

namespace transid {

TransmissionImage::TransmissionImage(int w, int h, double pitch, double fill)
    : width(w), height(h), pixel_pitch(pitch),
      pixels(static_cast<std::size_t>(std::max(w, 0)) * static_cast<std::size_t>(std::max(h, 0)), fill)
{
}

void TransmissionImage::validate() const
{
    if (width <= 0 || height <= 0)
        throw ValidationError("image dimensions must be positive");
    if (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) != pixels.size())
        throw ValidationError("image pixel count does not match width*height");
    if (!(pixel_pitch > 0.0))
        throw ValidationError("pixel_pitch must be positive");
    for (double v : pixels)
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("image intensities must lie in [0, 1]");
}

double TransmissionImage::sum() const
{
    double s = 0.0;
    for (double v : pixels)
        s += v;
    return s;
}

double TransmissionImage::mean() const
{
    return pixels.empty() ? 0.0 : sum() / static_cast<double>(pixels.size());
}

double normalized_cross_correlation(const TransmissionImage& a, const TransmissionImage& b)
{
    if (a.width != b.width || a.height != b.height)
        throw ValidationError("normalized_cross_correlation: image sizes differ");
    auto constant = [](const TransmissionImage& img) {
        return std::all_of(img.pixels.begin(), img.pixels.end(), [&](double v) { return v == img.pixels.front(); });
    };
    // the mean of a constant image need not be exact, so test constancy directly
    if (a.pixels.empty() || constant(a) || constant(b))
        return a.pixels == b.pixels ? 1.0 : 0.0;
    const double ma = a.mean();
    const double mb = b.mean();
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double da = a.pixels[i] - ma;
        const double db = b.pixels[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    return sab / std::sqrt(saa * sbb);
}

double window_mean(const TransmissionImage& img, int u0, int v0, int u1, int v1)
{
    u0 = std::clamp(u0, 0, img.width);
    u1 = std::clamp(u1, 0, img.width);
    v0 = std::clamp(v0, 0, img.height);
    v1 = std::clamp(v1, 0, img.height);
    if (u1 <= u0 || v1 <= v0)
        throw ValidationError("window_mean: empty window");
    double s = 0.0;
    for (int v = v0; v < v1; ++v)
        for (int u = u0; u < u1; ++u)
            s += img.at(u, v);
    return s / static_cast<double>((u1 - u0) * (v1 - v0));
}

namespace {

int checked_bits(int bits)
{
    if (bits != 8 && bits != 16)
        throw ValidationError("PGM bit depth must be 8 or 16");
    return bits;
}

} // namespace

TransmissionImage quantize(const TransmissionImage& img, int bits)
{
    const double maxval = static_cast<double>((1 << checked_bits(bits)) - 1);
    TransmissionImage out = img;
    for (double& v : out.pixels)
        v = std::round(std::clamp(v, 0.0, 1.0) * maxval) / maxval;
    return out;
}

std::string encode_pgm(const TransmissionImage& img, int bits)
{
    img.validate();
    const int maxval = (1 << checked_bits(bits)) - 1;
    char pitch[64];
    const auto res = std::to_chars(pitch, pitch + sizeof(pitch), img.pixel_pitch);

    std::string out = "P5\n# transid pixel_pitch=";
    out.append(pitch, res.ptr);
    out += '\n' + std::to_string(img.width) + ' ' + std::to_string(img.height) + '\n' +
           std::to_string(maxval) + '\n';
    out.reserve(out.size() + img.pixels.size() * (bits / 8));
    for (double v : img.pixels) {
        const auto q = static_cast<unsigned>(std::lround(v * maxval));
        if (bits == 16)
            out += static_cast<char>((q >> 8) & 0xFF);
        out += static_cast<char>(q & 0xFF);
    }
    return out;
}

TransmissionImage decode_pgm(std::string_view bytes)
{
    std::size_t pos = 0;
    double pitch = 1.0;

    auto skip_space_and_comments = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                const auto end = bytes.find('\n', pos);
                const std::string_view comment =
                    bytes.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
                constexpr std::string_view key = "# transid pixel_pitch=";
                if (comment.starts_with(key)) {
                    const auto val = comment.substr(key.size());
                    double p = 0.0;
                    const auto r = std::from_chars(val.data(), val.data() + val.size(), p);
                    if (r.ec == std::errc{} && p > 0.0)
                        pitch = p;
                }
                pos = (end == std::string_view::npos) ? bytes.size() : end + 1;
            } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_space_and_comments();
        int v = 0;
        const auto r = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (r.ec != std::errc{})
            throw FormatError("PGM: malformed header");
        pos = static_cast<std::size_t>(r.ptr - bytes.data());
        return v;
    };

    if (bytes.size() < 2 || bytes.substr(0, 2) != "P5")
        throw FormatError("PGM: expected binary P5 magic");
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw FormatError("PGM: bad dimensions or maxval");
    if (pos >= bytes.size())
        throw FormatError("PGM: truncated header");
    ++pos; // single whitespace before raster

    const std::size_t bpp = maxval > 255 ? 2 : 1;
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - pos < n * bpp)
        throw FormatError("PGM: truncated raster");

    TransmissionImage img(w, h, pitch);
    const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned q = (bpp == 2) ? (static_cast<unsigned>(data[2 * i]) << 8) | data[2 * i + 1] : data[i];
        if (q > static_cast<unsigned>(maxval))
            throw FormatError("PGM: sample exceeds maxval");
        img.pixels[i] = static_cast<double>(q) / maxval;
    }
    return img;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw FormatError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::filesystem::path& path, const TransmissionImage& img, int bits)
{
    write_file(path, encode_pgm(img, bits));
}

TransmissionImage read_pgm(const std::filesystem::path& path)
{
    return decode_pgm(read_file(path));
}

} // namespace transid
