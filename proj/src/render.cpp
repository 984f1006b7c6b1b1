#include "transid/render.hpp"

#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace transid {

namespace {

struct Interval {
    double lo;
    double hi;
};

/// Intersection of the vertical line {x} x R with a CCW convex quad.
bool chord(const Quad& q, double x, Interval& out)
{
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 4; ++i) {
        const Vec2 a = q[i];
        const Vec2 e = q[(i + 1) % 4] - a;
        if (e.x == 0.0) {
            if (-e.y * (x - a.x) < 0.0)
                return false;
            continue;
        }
        const double y = a.y + e.y * (x - a.x) / e.x;
        if (e.x > 0.0)
            lo = std::max(lo, y);
        else
            hi = std::min(hi, y);
    }
    if (!(hi > lo))
        return false;
    out = {lo, hi};
    return true;
}

double union_length(std::vector<Interval>& parts)
{
    if (parts.empty())
        return 0.0;
    std::sort(parts.begin(), parts.end(), [](const Interval& a, const Interval& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
    });
    double total = 0.0;
    double lo = parts.front().lo;
    double hi = parts.front().hi;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i].lo > hi) {
            total += hi - lo;
            lo = parts[i].lo;
            hi = parts[i].hi;
        } else {
            hi = std::max(hi, parts[i].hi);
        }
    }
    return total + (hi - lo);
}

struct PreparedStrut {
    Quad quad;
    double xmin;
    double xmax;
};

std::vector<PreparedStrut> prepare(const Layer& layer)
{
    std::vector<PreparedStrut> out;
    out.reserve(layer.struts.size());
    for (const Strut& s : layer.struts) {
        PreparedStrut p{strut_footprint(s), 0.0, 0.0};
        p.xmin = p.xmax = p.quad[0].x;
        for (const Vec2& v : p.quad) {
            p.xmin = std::min(p.xmin, v.x);
            p.xmax = std::max(p.xmax, v.x);
        }
        out.push_back(p);
    }
    return out;
}

PathLengths trace_prepared(const Shell& shell, const std::vector<PreparedStrut>* struts, double x,
                           std::vector<Interval>& scratch)
{
    Interval outer{};
    if (!chord(shell.outer, x, outer))
        return {};
    scratch.clear();
    Interval inner{};
    if (shell.inner && chord(*shell.inner, x, inner)) {
        if (inner.lo > outer.lo)
            scratch.push_back({outer.lo, inner.lo});
        if (outer.hi > inner.hi)
            scratch.push_back({inner.hi, outer.hi});
    } else {
        scratch.push_back(outer);
    }
    if (struts) {
        Interval c{};
        for (const PreparedStrut& s : *struts) {
            if (x < s.xmin || x > s.xmax)
                continue;
            if (chord(s.quad, x, c))
                scratch.push_back(c);
        }
    }
    const double solid = union_length(scratch);
    const double span = outer.hi - outer.lo;
    return {solid, std::max(0.0, span - solid)};
}

void check_footprint(const SliceGeometry& geom, const ImagePlane& plane)
{
    const double cx = 0.5 * geom.size.x + plane.camera_offset_x;
    const double cz = 0.5 * geom.size.z;
    const double half_w = 0.5 * plane.width * plane.pixel_pitch;
    const double half_h = 0.5 * plane.height * plane.pixel_pitch;
    double xmin = geom.shell.outer[0].x;
    double xmax = xmin;
    for (const Vec2& v : geom.shell.outer) {
        xmin = std::min(xmin, v.x);
        xmax = std::max(xmax, v.x);
    }
    if (xmin < cx - half_w || xmax > cx + half_w || cz - half_h > 0.0 || cz + half_h < geom.size.z)
        throw FootprintError("footprint too small: posed object spans x in [" + std::to_string(xmin) + ", " +
                             std::to_string(xmax) + "] mm, frame covers [" + std::to_string(cx - half_w) +
                             ", " + std::to_string(cx + half_w) + "] mm");
}

int reflect(int i, int n)
{
    const int period = 2 * n;
    i %= period;
    if (i < 0)
        i += period;
    return (i < n) ? i : period - 1 - i;
}

} // namespace

void OpticalParams::validate() const
{
    if (!(std::isfinite(mu_air) && mu_air >= 0.0))
        throw ValidationError("mu_air must be >= 0");
    if (!(std::isfinite(mu_solid) && mu_solid >= mu_air))
        throw ValidationError("mu_solid must be >= mu_air");
    if (!(std::isfinite(diffusion_sigma) && diffusion_sigma >= 0.0))
        throw ValidationError("diffusion_sigma must be >= 0");
    if (!(source_intensity > 0.0 && source_intensity <= 1.0))
        throw ValidationError("source_intensity must lie in (0, 1]");
}

void ImagePlane::validate() const
{
    if (width <= 0 || height <= 0)
        throw ValidationError("image plane dimensions must be positive");
    if (!(pixel_pitch > 0.0))
        throw ValidationError("pixel_pitch must be positive");
}

PathLengths trace_ray(const SliceGeometry& geom, Ray ray)
{
    const auto li = geom.layer_at(ray.z);
    if (!li)
        return {};
    const auto struts = prepare(geom.layers[*li]);
    std::vector<Interval> scratch;
    return trace_prepared(geom.shell, &struts, ray.x, scratch);
}

double path_length(const SliceGeometry& geom, Ray ray)
{
    return trace_ray(geom, ray).solid;
}

Ray pixel_ray(const SliceGeometry& geom, const ImagePlane& plane, int u, int v)
{
    const double cx = 0.5 * geom.size.x + plane.camera_offset_x;
    const double cz = 0.5 * geom.size.z;
    return {cx + (u + 0.5 - 0.5 * plane.width) * plane.pixel_pitch,
            cz + (0.5 * plane.height - v - 0.5) * plane.pixel_pitch};
}

TransmissionImage render_attenuation(const SliceGeometry& geom, const OpticalParams& optics, const Pose& pose,
                                     const ImagePlane& plane)
{
    optics.validate();
    plane.validate();
    const SliceGeometry posed = transform(geom, pose);
    check_footprint(posed, plane);

    TransmissionImage img(plane.width, plane.height, plane.pixel_pitch, 0.0);
    std::vector<Interval> scratch;
    std::vector<PreparedStrut> struts;
    std::optional<std::size_t> cached;
    for (int v = 0; v < plane.height; ++v) {
        const double z = pixel_ray(posed, plane, 0, v).z;
        const auto li = posed.layer_at(z);
        if (li && li != cached) {
            struts = prepare(posed.layers[*li]);
            cached = li;
        }
        for (int u = 0; u < plane.width; ++u) {
            PathLengths path{};
            if (li)
                path = trace_prepared(posed.shell, &struts, pixel_ray(posed, plane, u, v).x, scratch);
            const double value =
                optics.source_intensity * std::exp(-optics.mu_solid * path.solid - optics.mu_air * path.air);
            img.at(u, v) = std::clamp(value, 0.0, 1.0);
        }
    }
    return img;
}

TransmissionImage render(const SliceGeometry& geom, const OpticalParams& optics, const Pose& pose,
                         const ImagePlane& plane)
{
    return apply_psf(render_attenuation(geom, optics, pose, plane), optics.diffusion_sigma);
}

TransmissionImage apply_psf(const TransmissionImage& img, double sigma)
{
    if (!(sigma >= 0.0))
        throw ValidationError("PSF sigma must be >= 0");
    if (sigma == 0.0)
        return img;

    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        norm += kernel[k + radius];
    }
    for (double& w : kernel)
        w /= norm;

    const int w = img.width;
    const int h = img.height;
    TransmissionImage tmp(w, h, img.pixel_pitch);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * img.at(reflect(u + k, w), v);
            tmp.at(u, v) = acc;
        }
    TransmissionImage out(w, h, img.pixel_pitch);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
                acc += kernel[k + radius] * tmp.at(u, reflect(v + k, h));
            out.at(u, v) = std::clamp(acc, 0.0, 1.0);
        }
    return out;
}

TransmissionImage add_noise(const TransmissionImage& img, const NoiseModel& noise)
{
    if (!(noise.gaussian_sigma >= 0.0))
        throw ValidationError("gaussian_sigma must be >= 0");
    if (noise.gaussian_sigma == 0.0)
        return img;
    TransmissionImage out = img;
    Rng rng(noise.seed);
    for (double& v : out.pixels)
        v = std::clamp(v + noise.gaussian_sigma * rng.gaussian(), 0.0, 1.0);
    return out;
}

TransmissionImage render_single_layer(double thickness, const OpticalParams& optics)
{
    if (!(thickness > 0.0))
        throw ValidationError("layer thickness must be positive");
    const SliceGeometry sheet = solid_block({20.0, thickness, 20.0});
    return render(sheet, optics, Pose{}, ImagePlane{32, 32, 1.0, 0.0});
}

double single_layer_interior(const TransmissionImage& img)
{
    const int u0 = img.width / 2 - 4;
    const int v0 = img.height / 2 - 4;
    return window_mean(img, u0, v0, u0 + 8, v0 + 8);
}

} // namespace transid
