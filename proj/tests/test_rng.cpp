#include "oracles.hpp"

#include "doctest.h"

#include <set>

using namespace transid;

TEST_CASE("rng outputs match a stateful SplitMix64")
{
    for (std::uint64_t seed : {0ull, 1ull, 42ull, 0xFFFFFFFFFFFFFFFFull}) {
        Rng rng(seed);
        oracle::SplitMix64 ref{seed};
        for (int i = 0; i < 1000; ++i)
            REQUIRE(rng.next_u64() == ref.next());
        CHECK(rng.counter() == 1000);
    }
}

TEST_CASE("rng reference vector for seed 0")
{
    Rng rng(0);
    CHECK(rng.next_u64() == 0xE220A8397B1DCDAFull);
}

TEST_CASE("uniform lies in [0, 1) with mean near one half")
{
    Rng rng(7);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.005));
}

TEST_CASE("uniform is the top 53 bits of the raw output")
{
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i)
        CHECK(a.uniform() == static_cast<double>(b.next_u64() >> 11) * 0x1.0p-53);
}

TEST_CASE("gaussian consumes two outputs and has unit variance")
{
    Rng rng(3);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        s += g;
        s2 += g * g;
    }
    CHECK(rng.counter() == 2ull * n);
    CHECK(std::abs(s / n) < 0.01);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("below stays in range and covers every value")
{
    Rng rng(11);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = rng.below(7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    CHECK(rng.below(1) == 0);
}

TEST_CASE("derive_seed follows its closed form and separates streams")
{
    const std::uint64_t parent = 12345;
    const std::uint64_t expect =
        mix64(mix64(parent ^ (3ull * 0xD1B54A32D192ED03ull)) + 5ull * 0x9E3779B97F4A7C15ull);
    CHECK(derive_seed(parent, Stream::Capture, 5) == expect);

    std::set<std::uint64_t> seeds;
    for (auto s : {Stream::Object, Stream::Layer, Stream::Capture, Stream::Noise, Stream::Split, Stream::Shuffle,
                   Stream::Init, Stream::Augment})
        for (std::uint64_t i = 0; i < 100; ++i)
            seeds.insert(derive_seed(parent, s, i));
    CHECK(seeds.size() == 800);
}
