#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace transid {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

/// Convex quadrilateral, counter-clockwise.
using Quad = std::array<Vec2, 4>;

Quad axis_box(double x0, double y0, double x1, double y1);
bool point_in_convex(const Quad& quad, Vec2 p, double tol = 0.0);
/// Signed distance-like measure of how far `p` lies outside `quad` (<= 0 inside).
double outside_distance(const Quad& quad, Vec2 p);

enum class InfillPattern { Linear, DiamondFill, Hexagonal };

/// Accepts "linear", "diamond"/"diamondfill"/"diamond_fill", "hexagonal"/"hex"/"honeycomb".
InfillPattern parse_pattern(std::string_view name);
std::string_view to_string(InfillPattern pattern);

/// Per-object manufacturing deviation. Lengths in mm.
struct ErrorModel {
    double sigma_pos = 0.05;
    double sigma_width = 0.02;
    double sigma_layer = 0.02;
    double dropout_prob = 0.005;

    static ErrorModel none() { return {0.0, 0.0, 0.0, 0.0}; }
    bool is_zero() const;
    void validate() const;
    friend bool operator==(const ErrorModel&, const ErrorModel&) = default;
};

/// Full parametric description of one printed box. Lengths in mm.
struct InfillSpec {
    InfillPattern pattern = InfillPattern::DiamondFill;
    double density = 0.10;
    Vec2 position_offset{};
    double layer_thickness = 0.2;
    double printing_width = 0.4;
    Vec3 object_size{50.0, 50.0, 50.0};
    double shell_thickness = 1.2;
    ErrorModel error{};
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const InfillSpec&, const InfillSpec&) = default;
};

/// Strut spacing for the spec's pattern: perpendicular line spacing for
/// Linear/DiamondFill, flat-to-flat cell width for Hexagonal.
double strut_spacing(const InfillSpec& spec);
/// Hexagon edge length giving a wall-area fraction of `density`.
double hex_edge(const InfillSpec& spec);
/// Translational period of the lattice along x and y.
Vec2 lattice_period(const InfillSpec& spec);
/// position_offset wrapped into [0, period) per axis.
Vec2 wrapped_offset(const InfillSpec& spec);

struct Strut {
    Vec2 p0;
    Vec2 p1;
    double width = 0.0;
    friend bool operator==(const Strut&, const Strut&) = default;
};

/// Rectangle footprint of a strut (no end caps).
Quad strut_footprint(const Strut& strut);

struct Layer {
    double z_low = 0.0;
    double z_high = 0.0;
    std::vector<Strut> struts;
    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Vertical side walls of the box. `inner` is absent for a solid block.
struct Shell {
    Quad outer{};
    std::optional<Quad> inner;
    double thickness = 0.0;
    friend bool operator==(const Shell&, const Shell&) = default;
};

/// Realized object: walls plus per-layer infill struts.
struct SliceGeometry {
    Vec3 size{};
    Vec2 center{};
    Shell shell;
    std::vector<Layer> layers;

    std::size_t strut_count() const;
    /// Index of the layer containing height z (z_low <= z < z_high; z == top maps to the last layer).
    std::optional<std::size_t> layer_at(double z) const;
    void validate() const;
    friend bool operator==(const SliceGeometry&, const SliceGeometry&) = default;
};

/// Solid block of the given size occupying [0,X]x[0,Y]x[0,Z], no infill.
SliceGeometry solid_block(Vec3 size);

struct Pose {
    Vec2 translation{};
    double rotation_deg = 0.0;

    Pose normalized() const;
    Pose inverse() const;
    bool is_identity() const;
    friend bool operator==(const Pose&, const Pose&) = default;
};

SliceGeometry generate_infill(const InfillSpec& spec);
SliceGeometry apply_errors(const SliceGeometry& geom, const ErrorModel& error, std::uint64_t seed);
SliceGeometry transform(const SliceGeometry& geom, const Pose& pose);

/// generate_infill followed by apply_errors with the spec's own error model and seed.
SliceGeometry realize(const InfillSpec& spec);

/// Segment clipped to a convex quad; nullopt when nothing of positive length remains.
std::optional<std::pair<Vec2, Vec2>> clip_segment(Vec2 p0, Vec2 p1, const Quad& quad);

// Line-oriented text export: one strut per line, `layer_index x0 y0 x1 y1 width`,
// preceded by `#` header lines carrying size, center, shell and layer bounds.
std::string to_text(const SliceGeometry& geom);
SliceGeometry geometry_from_text(std::string_view text);

} // namespace transid
