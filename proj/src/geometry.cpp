#include "transid/geometry.hpp"

#include "transid/errors.hpp"
#include "transid/rng.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <cmath>
#include <numbers>

namespace transid {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kSqrt3 = std::numbers::sqrt3;
constexpr double kMinWidth = 0.05;
constexpr double kMinStrutLength = 1e-9;

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

void require(bool ok, const std::string& what)
{
    if (!ok)
        throw ValidationError(what);
}

double edge_length(Vec2 a, Vec2 b) { return std::hypot(b.x - a.x, b.y - a.y); }

/// Parallel lines {p : n.p = (k + 1/2) d + n.offset} clipped to `region`.
void add_line_family(std::vector<Strut>& out, const Quad& region, Vec2 direction, double spacing,
                     Vec2 offset, double width)
{
    const Vec2 normal{-direction.y, direction.x};
    double lo = dot(normal, region[0]);
    double hi = lo;
    double reach = 0.0;
    for (const Vec2& v : region) {
        lo = std::min(lo, dot(normal, v));
        hi = std::max(hi, dot(normal, v));
        reach = std::max(reach, std::abs(dot(direction, v)));
    }
    const double base = dot(normal, offset);
    const auto k_first = static_cast<long long>(std::ceil((lo - base) / spacing - 0.5));
    const auto k_last = static_cast<long long>(std::floor((hi - base) / spacing - 0.5));
    reach += 1.0;
    for (long long k = k_first; k <= k_last; ++k) {
        const double c = (static_cast<double>(k) + 0.5) * spacing + base;
        const Vec2 mid = c * normal;
        const auto seg = clip_segment(mid - reach * direction, mid + reach * direction, region);
        if (seg)
            out.push_back({seg->first, seg->second, width});
    }
}

/// Pointy-top honeycomb with edge `a`; each cell emits its right, upper-right
/// and lower-right walls so every shared wall appears once.
void add_honeycomb(std::vector<Strut>& out, const Quad& region, double a, Vec2 offset, double width)
{
    double xmin = region[0].x, xmax = region[0].x, ymin = region[0].y, ymax = region[0].y;
    for (const Vec2& v : region) {
        xmin = std::min(xmin, v.x);
        xmax = std::max(xmax, v.x);
        ymin = std::min(ymin, v.y);
        ymax = std::max(ymax, v.y);
    }
    const double col = kSqrt3 * a;
    const double row = 1.5 * a;
    const auto j0 = static_cast<long long>(std::floor((ymin - offset.y - a) / row)) - 1;
    const auto j1 = static_cast<long long>(std::ceil((ymax - offset.y + a) / row)) + 1;
    const auto i0 = static_cast<long long>(std::floor((xmin - offset.x - col) / col)) - 1;
    const auto i1 = static_cast<long long>(std::ceil((xmax - offset.x + col) / col)) + 1;

    const Vec2 v0{0.5 * kSqrt3 * a, 0.5 * a};
    const Vec2 v1{0.0, a};
    const Vec2 v4{0.0, -a};
    const Vec2 v5{0.5 * kSqrt3 * a, -0.5 * a};

    for (long long j = j0; j <= j1; ++j) {
        const double shift = (j % 2 != 0) ? 0.5 * col : 0.0;
        for (long long i = i0; i <= i1; ++i) {
            const Vec2 c{offset.x + static_cast<double>(i) * col + shift,
                         offset.y + static_cast<double>(j) * row};
            const std::array<std::pair<Vec2, Vec2>, 3> walls{{
                {c + v5, c + v0},
                {c + v0, c + v1},
                {c + v4, c + v5},
            }};
            for (const auto& [p, q] : walls) {
                const auto seg = clip_segment(p, q, region);
                if (seg)
                    out.push_back({seg->first, seg->second, width});
            }
        }
    }
}

Vec2 rotate_about(Vec2 p, Vec2 center, double c, double s)
{
    const Vec2 d = p - center;
    return {center.x + c * d.x - s * d.y, center.y + s * d.x + c * d.y};
}

} // namespace

// ---------------------------------------------------------------------------

Quad axis_box(double x0, double y0, double x1, double y1)
{
    return {Vec2{x0, y0}, Vec2{x1, y0}, Vec2{x1, y1}, Vec2{x0, y1}};
}

bool point_in_convex(const Quad& quad, Vec2 p, double tol)
{
    return outside_distance(quad, p) <= tol;
}

double outside_distance(const Quad& quad, Vec2 p)
{
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < quad.size(); ++i) {
        const Vec2 a = quad[i];
        const Vec2 b = quad[(i + 1) % quad.size()];
        const double len = edge_length(a, b);
        if (len == 0.0)
            continue;
        worst = std::max(worst, -cross(b - a, p - a) / len);
    }
    return worst;
}

std::optional<std::pair<Vec2, Vec2>> clip_segment(Vec2 p0, Vec2 p1, const Quad& quad)
{
    const Vec2 d = p1 - p0;
    double t0 = 0.0;
    double t1 = 1.0;
    for (std::size_t i = 0; i < quad.size(); ++i) {
        const Vec2 a = quad[i];
        const Vec2 e = quad[(i + 1) % quad.size()] - a;
        const Vec2 inward{-e.y, e.x};
        const double num = dot(inward, p0 - a);
        const double den = dot(inward, d);
        if (den == 0.0) {
            if (num < 0.0)
                return std::nullopt;
            continue;
        }
        const double t = -num / den;
        if (den > 0.0)
            t0 = std::max(t0, t);
        else
            t1 = std::min(t1, t);
        if (t0 > t1)
            return std::nullopt;
    }
    const Vec2 a = (t0 == 0.0) ? p0 : p0 + t0 * d;
    const Vec2 b = (t1 == 1.0) ? p1 : p0 + t1 * d;
    if (edge_length(a, b) <= kMinStrutLength)
        return std::nullopt;
    return std::make_pair(a, b);
}

Quad strut_footprint(const Strut& strut)
{
    const Vec2 d = strut.p1 - strut.p0;
    const double len = std::hypot(d.x, d.y);
    if (len == 0.0)
        return {strut.p0, strut.p0, strut.p0, strut.p0};
    const double h = 0.5 * strut.width / len;
    const Vec2 n{-d.y * h, d.x * h};
    return {strut.p0 - n, strut.p1 - n, strut.p1 + n, strut.p0 + n};
}

// ---------------------------------------------------------------------------

InfillPattern parse_pattern(std::string_view name)
{
    const std::string n = lower(name);
    if (n == "linear" || n == "lines" || n == "rectilinear")
        return InfillPattern::Linear;
    if (n == "diamond" || n == "diamondfill" || n == "diamond_fill" || n == "diamond fill")
        return InfillPattern::DiamondFill;
    if (n == "hexagonal" || n == "hex" || n == "honeycomb")
        return InfillPattern::Hexagonal;
    throw ValidationError("unknown infill pattern '" + std::string(name) + "'");
}

std::string_view to_string(InfillPattern pattern)
{
    switch (pattern) {
    case InfillPattern::Linear:
        return "linear";
    case InfillPattern::DiamondFill:
        return "diamond";
    case InfillPattern::Hexagonal:
        return "hexagonal";
    }
    return "unknown";
}

bool ErrorModel::is_zero() const
{
    return sigma_pos == 0.0 && sigma_width == 0.0 && sigma_layer == 0.0 && dropout_prob == 0.0;
}

void ErrorModel::validate() const
{
    require(std::isfinite(sigma_pos) && sigma_pos >= 0.0, "sigma_pos must be >= 0");
    require(std::isfinite(sigma_width) && sigma_width >= 0.0, "sigma_width must be >= 0");
    require(std::isfinite(sigma_layer) && sigma_layer >= 0.0, "sigma_layer must be >= 0");
    require(dropout_prob >= 0.0 && dropout_prob < 1.0, "dropout_prob must lie in [0, 1)");
}

void InfillSpec::validate() const
{
    require(density > 0.0 && density <= 1.0, "density must lie in (0, 1]");
    require(layer_thickness >= 0.05 && layer_thickness <= 1.0, "layer_thickness must lie in [0.05, 1.0] mm");
    require(printing_width >= 0.1 && printing_width <= 1.0, "printing_width must lie in [0.1, 1.0] mm");
    require(std::isfinite(shell_thickness) && shell_thickness > 0.0, "shell_thickness must be > 0");
    const double wall = 2.0 * shell_thickness;
    require(object_size.x > wall && object_size.y > wall && object_size.z > wall,
            "every object dimension must exceed twice the shell thickness");
    require(std::isfinite(position_offset.x) && std::isfinite(position_offset.y),
            "position_offset must be finite");
    error.validate();
}

double hex_edge(const InfillSpec& spec)
{
    // wall area per cell 3*a*w over cell area (3*sqrt3/2)*a^2
    return 2.0 * spec.printing_width / (kSqrt3 * spec.density);
}

double strut_spacing(const InfillSpec& spec)
{
    switch (spec.pattern) {
    case InfillPattern::Linear:
        return spec.printing_width / spec.density;
    case InfillPattern::DiamondFill:
        return 2.0 * spec.printing_width / spec.density;
    case InfillPattern::Hexagonal:
        return kSqrt3 * hex_edge(spec);
    }
    return 0.0;
}

Vec2 lattice_period(const InfillSpec& spec)
{
    const double d = strut_spacing(spec);
    if (spec.pattern == InfillPattern::Hexagonal) {
        const double a = hex_edge(spec);
        return {kSqrt3 * a, 3.0 * a};
    }
    return {d * kSqrt2, d * kSqrt2};
}

Vec2 wrapped_offset(const InfillSpec& spec)
{
    const Vec2 period = lattice_period(spec);
    auto wrap = [](double v, double p) {
        double r = std::fmod(v, p);
        if (r < 0.0)
            r += p;
        if (r >= p)
            r = 0.0;
        return r;
    };
    return {wrap(spec.position_offset.x, period.x), wrap(spec.position_offset.y, period.y)};
}

// ---------------------------------------------------------------------------

std::size_t SliceGeometry::strut_count() const
{
    std::size_t n = 0;
    for (const Layer& layer : layers)
        n += layer.struts.size();
    return n;
}

std::optional<std::size_t> SliceGeometry::layer_at(double z) const
{
    if (layers.empty() || z < layers.front().z_low || z > layers.back().z_high)
        return std::nullopt;
    const auto it = std::upper_bound(layers.begin(), layers.end(), z,
                                     [](double v, const Layer& l) { return v < l.z_high; });
    if (it == layers.end())
        return layers.size() - 1;
    return static_cast<std::size_t>(it - layers.begin());
}

void SliceGeometry::validate() const
{
    require(size.x > 0.0 && size.y > 0.0 && size.z > 0.0, "geometry size must be positive");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        require(layers[i].z_high > layers[i].z_low, "layer heights must be positive");
        if (i + 1 < layers.size())
            require(layers[i].z_high == layers[i + 1].z_low, "layers must be contiguous");
        for (const Strut& s : layers[i].struts) {
            require(s.width > 0.0, "strut widths must be positive");
            if (shell.inner) {
                require(point_in_convex(*shell.inner, s.p0, 1e-9) && point_in_convex(*shell.inner, s.p1, 1e-9),
                        "strut outside the shell interior");
            }
        }
    }
    if (!layers.empty()) {
        require(layers.front().z_low == 0.0 && layers.back().z_high == size.z, "layers must tile [0, Z]");
    }
}

SliceGeometry solid_block(Vec3 size)
{
    if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0))
        throw ValidationError("solid block dimensions must be positive");
    SliceGeometry g;
    g.size = size;
    g.center = {0.5 * size.x, 0.5 * size.y};
    g.shell.outer = axis_box(0.0, 0.0, size.x, size.y);
    g.shell.thickness = std::min(size.x, size.y);
    g.layers.push_back({0.0, size.z, {}});
    return g;
}

// ---------------------------------------------------------------------------

Pose Pose::normalized() const
{
    double r = std::fmod(rotation_deg, 360.0);
    if (r < 0.0)
        r += 360.0;
    if (r >= 360.0)
        r = 0.0;
    return {translation, r};
}

Pose Pose::inverse() const
{
    return Pose{{-translation.x, -translation.y}, -rotation_deg}.normalized();
}

bool Pose::is_identity() const
{
    const Pose n = normalized();
    return n.rotation_deg == 0.0 && n.translation.x == 0.0 && n.translation.y == 0.0;
}

// ---------------------------------------------------------------------------

SliceGeometry generate_infill(const InfillSpec& spec)
{
    spec.validate();
    const double spacing = strut_spacing(spec);
    if (!(spacing > spec.printing_width))
        throw DensityInfeasibleError("density infeasible: strut spacing " + std::to_string(spacing) +
                                     " mm does not exceed printing width " +
                                     std::to_string(spec.printing_width) + " mm");

    const Vec3 size = spec.object_size;
    const double s = spec.shell_thickness;
    const Quad inner = axis_box(s, s, size.x - s, size.y - s);
    const Vec2 offset = wrapped_offset(spec);
    const double w = spec.printing_width;

    SliceGeometry g;
    g.size = size;
    g.center = {0.5 * size.x, 0.5 * size.y};
    g.shell.outer = axis_box(0.0, 0.0, size.x, size.y);
    g.shell.inner = inner;
    g.shell.thickness = s;

    const Vec2 up{1.0 / kSqrt2, 1.0 / kSqrt2};
    const Vec2 down{1.0 / kSqrt2, -1.0 / kSqrt2};

    std::vector<Strut> rising, falling, honeycomb;
    switch (spec.pattern) {
    case InfillPattern::Linear:
    case InfillPattern::DiamondFill:
        add_line_family(rising, inner, up, spacing, offset, w);
        add_line_family(falling, inner, down, spacing, offset, w);
        break;
    case InfillPattern::Hexagonal:
        add_honeycomb(honeycomb, inner, hex_edge(spec), offset, w);
        break;
    }

    const auto count = std::max<long long>(1, std::llround(size.z / spec.layer_thickness));
    const auto n = static_cast<std::size_t>(count);
    g.layers.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Layer& layer = g.layers[i];
        layer.z_low = (i == 0) ? 0.0 : g.layers[i - 1].z_high;
        layer.z_high = (i + 1 == n) ? size.z : size.z * static_cast<double>(i + 1) / static_cast<double>(n);
        switch (spec.pattern) {
        case InfillPattern::Linear:
            layer.struts = (i % 2 == 0) ? rising : falling;
            break;
        case InfillPattern::DiamondFill:
            layer.struts = rising;
            layer.struts.insert(layer.struts.end(), falling.begin(), falling.end());
            break;
        case InfillPattern::Hexagonal:
            layer.struts = honeycomb;
            break;
        }
    }
    return g;
}

SliceGeometry apply_errors(const SliceGeometry& geom, const ErrorModel& error, std::uint64_t seed)
{
    error.validate();
    if (error.is_zero())
        return geom;

    SliceGeometry out = geom;
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
        Layer& layer = out.layers[li];
        Rng rng(derive_seed(seed, Stream::Layer, li));
        const Vec2 drift{error.sigma_layer * rng.gaussian(), error.sigma_layer * rng.gaussian()};

        std::vector<Strut> kept;
        kept.reserve(layer.struts.size());
        for (const Strut& s : layer.struts) {
            // fixed draw order: p0.x p0.y p1.x p1.y width dropout
            const double g0x = rng.gaussian();
            const double g0y = rng.gaussian();
            const double g1x = rng.gaussian();
            const double g1y = rng.gaussian();
            const double gw = rng.gaussian();
            const double u = rng.uniform();
            if (u < error.dropout_prob)
                continue;

            const Vec2 p0 = s.p0 + Vec2{error.sigma_pos * g0x, error.sigma_pos * g0y} + drift;
            const Vec2 p1 = s.p1 + Vec2{error.sigma_pos * g1x, error.sigma_pos * g1y} + drift;
            const double width = std::max(kMinWidth, s.width + error.sigma_width * gw);
            if (!out.shell.inner)
                continue;
            const auto seg = clip_segment(p0, p1, *out.shell.inner);
            if (seg)
                kept.push_back({seg->first, seg->second, width});
        }
        layer.struts = std::move(kept);
    }
    return out;
}

SliceGeometry transform(const SliceGeometry& geom, const Pose& pose)
{
    const Pose p = pose.normalized();
    if (p.is_identity())
        return geom;

    const double rad = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const Vec2 pivot = geom.center;
    auto map = [&](Vec2 v) { return rotate_about(v, pivot, c, s) + p.translation; };

    SliceGeometry out = geom;
    out.center = pivot + p.translation;
    for (Vec2& v : out.shell.outer)
        v = map(v);
    if (out.shell.inner)
        for (Vec2& v : *out.shell.inner)
            v = map(v);
    for (Layer& layer : out.layers)
        for (Strut& st : layer.struts) {
            st.p0 = map(st.p0);
            st.p1 = map(st.p1);
        }
    return out;
}

SliceGeometry realize(const InfillSpec& spec)
{
    return apply_errors(generate_infill(spec), spec.error, spec.seed);
}

} // namespace transid
