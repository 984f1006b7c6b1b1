#include "oracles.hpp"

#include "transid/errors.hpp"
#include "transid/geometry.hpp"

#include "doctest.h"

#include <cmath>
#include <numbers>

using namespace transid;

namespace {

InfillSpec spec_of(InfillPattern p, double density)
{
    InfillSpec s;
    s.pattern = p;
    s.density = density;
    return s;
}

/// Fraction of random interior points of layer `li` covered by struts.
double covered_fraction(const SliceGeometry& g, std::size_t li, std::uint64_t seed)
{
    Rng rng(seed);
    const auto& inner = *g.shell.inner;
    const double x0 = inner[0].x + 2.0, x1 = inner[2].x - 2.0;
    const double y0 = inner[0].y + 2.0, y1 = inner[2].y - 2.0;
    int hit = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const Vec2 p{x0 + (x1 - x0) * rng.uniform(), y0 + (y1 - y0) * rng.uniform()};
        for (const auto& s : g.layers[li].struts)
            if (oracle::in_strut(s, p)) {
                ++hit;
                break;
            }
    }
    return static_cast<double>(hit) / n;
}

double strut_angle(const Strut& s)
{
    return std::atan2(s.p1.y - s.p0.y, s.p1.x - s.p0.x) * 180.0 / std::numbers::pi;
}

bool is_rising(const Strut& s)
{
    const double a = std::fmod(strut_angle(s) + 360.0, 180.0);
    return std::abs(a - 45.0) < 1e-9;
}

} // namespace

TEST_CASE("strut spacing follows the density rule")
{
    CHECK(strut_spacing(spec_of(InfillPattern::Linear, 0.2)) == doctest::Approx(2.0));
    CHECK(strut_spacing(spec_of(InfillPattern::DiamondFill, 0.2)) == doctest::Approx(4.0));
    // hexagon wall fraction 3 a w / (3 sqrt3 / 2 a^2) = density
    const InfillSpec h = spec_of(InfillPattern::Hexagonal, 0.2);
    const double a = hex_edge(h);
    CHECK(3.0 * a * h.printing_width / (1.5 * std::sqrt(3.0) * a * a) == doctest::Approx(0.2));
    CHECK(strut_spacing(h) == doctest::Approx(std::sqrt(3.0) * a));
}

TEST_CASE("covered area matches the requested density")
{
    // Monte-Carlo calibration; crossing overlaps make diamond and hexagon read slightly low.
    struct Case {
        InfillPattern p;
        double density;
        double tol;
    };
    for (auto c : {Case{InfillPattern::Linear, 0.2, 0.02}, Case{InfillPattern::DiamondFill, 0.2, 0.03},
                   Case{InfillPattern::Hexagonal, 0.2, 0.03}, Case{InfillPattern::DiamondFill, 0.1, 0.015}}) {
        InfillSpec s = spec_of(c.p, c.density);
        s.error = ErrorModel::none();
        const SliceGeometry g = realize(s);
        CAPTURE(to_string(c.p));
        CHECK(std::abs(covered_fraction(g, 0, 5) - c.density) < c.tol);
    }
}

TEST_CASE("patterns realize their strut families")
{
    InfillSpec s = spec_of(InfillPattern::Linear, 0.2);
    s.error = ErrorModel::none();
    const SliceGeometry lin = generate_infill(s);
    REQUIRE(lin.layers.size() == 250);
    for (std::size_t i = 0; i < 4; ++i)
        for (const auto& st : lin.layers[i].struts)
            CHECK(is_rising(st) == (i % 2 == 0));

    s.pattern = InfillPattern::DiamondFill;
    const SliceGeometry dia = generate_infill(s);
    std::size_t rising = 0;
    for (const auto& st : dia.layers[0].struts)
        rising += is_rising(st);
    CHECK(rising > 0);
    CHECK(rising < dia.layers[0].struts.size());
    CHECK(dia.layers[0].struts == dia.layers[1].struts);

    s.pattern = InfillPattern::Hexagonal;
    const SliceGeometry hex = generate_infill(s);
    for (const auto& st : hex.layers[0].struts) {
        const double a = std::fmod(strut_angle(st) + 360.0, 60.0);
        CHECK((std::abs(a - 30.0) < 1e-6 || a < 1e-6 || std::abs(a - 60.0) < 1e-6));
    }
}

TEST_CASE("diamond fill at 20 percent realizes a valid geometry")
{
    InfillSpec s = spec_of(InfillPattern::DiamondFill, 0.20);
    CHECK_NOTHROW(realize(s).validate());
}

TEST_CASE("infeasible and invalid specs are rejected")
{
    CHECK_THROWS_AS(generate_infill(spec_of(InfillPattern::Linear, 1.0)), DensityInfeasibleError);
    CHECK_THROWS_AS(generate_infill(spec_of(InfillPattern::Linear, 0.0)), ValidationError);
    InfillSpec s;
    s.object_size = {2.0, 50.0, 50.0};
    CHECK_THROWS_AS(generate_infill(s), ValidationError);
    s = InfillSpec{};
    s.error.dropout_prob = 1.5;
    CHECK_THROWS_AS(realize(s), ValidationError);
    CHECK_THROWS_AS(parse_pattern("zigzag"), ValidationError);
    CHECK(parse_pattern("honeycomb") == InfillPattern::Hexagonal);
}

TEST_CASE("generation is deterministic and ignores the seed without errors")
{
    InfillSpec a = spec_of(InfillPattern::DiamondFill, 0.2);
    a.error = ErrorModel::none();
    InfillSpec b = a;
    b.seed = 999;
    CHECK(realize(a) == realize(b));

    InfillSpec c = spec_of(InfillPattern::DiamondFill, 0.2);
    c.seed = 1;
    InfillSpec d = c;
    CHECK(realize(c) == realize(d));
    d.seed = 2;
    CHECK_FALSE(realize(c) == realize(d));
}

TEST_CASE("position offset wraps to the lattice period")
{
    InfillSpec s = spec_of(InfillPattern::DiamondFill, 0.2);
    s.error = ErrorModel::none();
    const Vec2 period = lattice_period(s);
    InfillSpec t = s;
    t.position_offset = {period.x, -2.0 * period.y};
    CHECK(generate_infill(s) == generate_infill(t));
    t.position_offset = {0.5, 0.0};
    CHECK_FALSE(generate_infill(s) == generate_infill(t));
}

TEST_CASE("struts stay inside the shell interior after errors and poses")
{
    Rng rng(2024);
    for (int trial = 0; trial < 12; ++trial) {
        InfillSpec s;
        s.pattern = static_cast<InfillPattern>(trial % 3);
        s.density = 0.1 + 0.25 * rng.uniform();
        s.position_offset = {10.0 * rng.uniform(), 10.0 * rng.uniform()};
        s.object_size = {20.0, 20.0, 4.0};
        s.error.sigma_pos = 0.3 * rng.uniform();
        s.error.sigma_layer = 0.3 * rng.uniform();
        s.seed = rng.next_u64();
        const Pose pose{{rng.uniform() - 0.5, rng.uniform() - 0.5}, 360.0 * rng.uniform()};
        const SliceGeometry g = transform(realize(s), pose);
        CHECK_NOTHROW(g.validate());
        for (const auto& layer : g.layers)
            for (const auto& st : layer.struts) {
                CHECK(outside_distance(*g.shell.inner, st.p0) <= 1e-9);
                CHECK(outside_distance(*g.shell.inner, st.p1) <= 1e-9);
                CHECK(st.width >= 0.05);
            }
    }
}

TEST_CASE("error model perturbs widths, drops struts and stays deterministic")
{
    InfillSpec s = spec_of(InfillPattern::DiamondFill, 0.2);
    s.error = ErrorModel::none();
    const SliceGeometry base = generate_infill(s);
    ErrorModel e;
    e.dropout_prob = 0.2;
    const SliceGeometry a = apply_errors(base, e, 7);
    CHECK(a == apply_errors(base, e, 7));
    const double kept = static_cast<double>(a.strut_count()) / static_cast<double>(base.strut_count());
    CHECK(kept == doctest::Approx(0.8).epsilon(0.05));
    CHECK(apply_errors(base, ErrorModel::none(), 7) == base);
}

TEST_CASE("pose inverse undoes a transform")
{
    InfillSpec s = spec_of(InfillPattern::Hexagonal, 0.15);
    s.object_size = {20.0, 20.0, 3.0};
    const SliceGeometry g = realize(s);
    const Pose p{{0.7, -0.3}, 33.0};
    const SliceGeometry round = transform(transform(g, p), Pose{{-0.7, 0.3}, 0.0});
    const SliceGeometry back = transform(round, Pose{{0.0, 0.0}, -33.0});
    for (std::size_t i = 0; i < g.layers[0].struts.size(); ++i) {
        CHECK(back.layers[0].struts[i].p0.x == doctest::Approx(g.layers[0].struts[i].p0.x).epsilon(1e-12));
        CHECK(back.layers[0].struts[i].p1.y == doctest::Approx(g.layers[0].struts[i].p1.y).epsilon(1e-12));
    }
    CHECK(Pose{{0, 0}, 360.0}.is_identity());
    CHECK(p.inverse().rotation_deg == doctest::Approx(327.0));
}

TEST_CASE("clip_segment against a box")
{
    const Quad box = axis_box(0.0, 0.0, 10.0, 10.0);
    auto c = clip_segment({-5.0, 5.0}, {15.0, 5.0}, box);
    REQUIRE(c);
    CHECK(c->first.x == doctest::Approx(0.0));
    CHECK(c->second.x == doctest::Approx(10.0));
    c = clip_segment({-5.0, -5.0}, {15.0, 15.0}, box);
    REQUIRE(c);
    CHECK(c->first.y == doctest::Approx(0.0));
    CHECK(c->second.y == doctest::Approx(10.0));
    CHECK_FALSE(clip_segment({-5.0, 11.0}, {15.0, 11.0}, box));
    CHECK_FALSE(clip_segment({10.0, 0.0}, {12.0, 0.0}, box));
}

TEST_CASE("text export round-trips bit for bit")
{
    InfillSpec s = spec_of(InfillPattern::DiamondFill, 0.2);
    s.object_size = {20.0, 20.0, 3.0};
    s.seed = 77;
    const SliceGeometry g = transform(realize(s), Pose{{0.1, 0.2}, 17.0});
    const std::string text = to_text(g);
    CHECK(geometry_from_text(text) == g);
    CHECK(to_text(geometry_from_text(text)) == text);
    CHECK_THROWS_AS(geometry_from_text("garbage"), FormatError);
}

TEST_CASE("layer lookup")
{
    InfillSpec s;
    s.object_size = {10.0, 10.0, 3.0};
    const SliceGeometry g = realize(s);
    REQUIRE(g.layers.size() == 15);
    CHECK(g.layer_at(0.0) == 0u);
    CHECK(g.layer_at(0.3) == 1u);
    CHECK(g.layer_at(3.0) == 14u);
    CHECK_FALSE(g.layer_at(3.01));
    CHECK_FALSE(g.layer_at(-0.01));
}

TEST_CASE("spacing examples and the sparse-lattice limit")
{
    CHECK(strut_spacing(spec_of(InfillPattern::Linear, 0.10)) == doctest::Approx(4.0));
    // 45 degree lines 60 mm apart: the interior diagonal is under 71 mm, so each
    // family crosses it at most twice and every strut is a single chord
    InfillSpec s = spec_of(InfillPattern::Linear, 0.4 / 60.0);
    s.error = ErrorModel::none();
    const SliceGeometry g = generate_infill(s);
    REQUIRE(g.shell.inner.has_value());
    for (const Layer& layer : g.layers) {
        CHECK(layer.struts.size() <= 4);
        for (const Strut& st : layer.struts)
            CHECK(std::hypot(st.p1.x - st.p0.x, st.p1.y - st.p0.y) <= 50.0 * std::sqrt(2.0));
    }
}

TEST_CASE("hexagonal 10 percent covers 8 to 12 percent of a layer")
{
    InfillSpec s = spec_of(InfillPattern::Hexagonal, 0.10);
    s.error = ErrorModel::none();
    const SliceGeometry g = generate_infill(s);
    const auto& inner = *g.shell.inner;
    Rng rng(31);
    const int n = 1000000;
    int hit = 0;
    // bucket struts by x so each sample tests only nearby ones
    const double cell = 2.0;
    std::vector<std::vector<const Strut*>> buckets(static_cast<std::size_t>(std::ceil(s.object_size.x / cell)) + 1);
    for (const auto& st : g.layers[0].struts) {
        const double lo = std::min(st.p0.x, st.p1.x) - st.width, hi = std::max(st.p0.x, st.p1.x) + st.width;
        for (auto b = static_cast<std::size_t>(std::max(0.0, lo / cell)); b < buckets.size() && b * cell <= hi; ++b)
            buckets[b].push_back(&st);
    }
    for (int i = 0; i < n; ++i) {
        const Vec2 p{inner[0].x + (inner[2].x - inner[0].x) * rng.uniform(),
                     inner[0].y + (inner[2].y - inner[0].y) * rng.uniform()};
        for (const Strut* st : buckets[static_cast<std::size_t>(p.x / cell)])
            if (oracle::in_strut(*st, p)) {
                ++hit;
                break;
            }
    }
    const double fraction = static_cast<double>(hit) / n;
    CHECK(fraction >= 0.08);
    CHECK(fraction <= 0.12);
}

TEST_CASE("position noise changes strut endpoints between seeds")
{
    InfillSpec s = spec_of(InfillPattern::DiamondFill, 0.2);
    s.error = ErrorModel::none();
    const SliceGeometry base = generate_infill(s);
    ErrorModel e = ErrorModel::none();
    e.sigma_pos = 0.05;
    const SliceGeometry a = apply_errors(base, e, 1);
    const SliceGeometry b = apply_errors(base, e, 2);
    std::size_t differing = 0;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].struts.size(); ++i)
            differing += !(a.layers[l].struts[i].p0 == b.layers[l].struts[i].p0);
    CHECK(differing > 0);
}

TEST_CASE("certain dropout is rejected")
{
    InfillSpec s;
    s.error.dropout_prob = 1.0;
    CHECK_THROWS_AS(realize(s), ValidationError);
}

TEST_CASE("pose identities and exact translation")
{
    InfillSpec s = spec_of(InfillPattern::Hexagonal, 0.2);
    s.object_size = {20.0, 20.0, 3.0};
    s.seed = 12;
    const SliceGeometry g = realize(s);
    CHECK(transform(g, Pose{}) == g);

    const SliceGeometry full = transform(g, Pose{{0.0, 0.0}, 360.0});
    for (std::size_t i = 0; i < g.layers[1].struts.size(); ++i) {
        CHECK(std::abs(full.layers[1].struts[i].p0.x - g.layers[1].struts[i].p0.x) < 1e-9);
        CHECK(std::abs(full.layers[1].struts[i].p1.y - g.layers[1].struts[i].p1.y) < 1e-9);
    }

    const SliceGeometry moved = transform(g, Pose{{0.5, 0.0}, 0.0});
    for (std::size_t i = 0; i < g.layers[0].struts.size(); ++i) {
        CHECK(std::abs(moved.layers[0].struts[i].p0.x - (g.layers[0].struts[i].p0.x + 0.5)) < 1e-12);
        CHECK(std::abs(moved.layers[0].struts[i].p0.y - g.layers[0].struts[i].p0.y) < 1e-12);
    }
    for (int k = 0; k < 4; ++k)
        CHECK(std::abs(moved.shell.outer[k].x - (g.shell.outer[k].x + 0.5)) < 1e-12);
}
