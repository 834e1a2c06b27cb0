#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "vstorm/error.hpp"
#include "vstorm/sampling.hpp"

using namespace vstorm;

TEST_SUITE("sampling") {

TEST_CASE("golden angle sequence") {
    CHECK(golden_angle(0, 6) == 0.0);
    CHECK(golden_angle(5, 6) == 0.0);
    CHECK(golden_angle(11, 6) == 0.0);
    CHECK(golden_angle(1, 0) == doctest::Approx(2.399963).epsilon(1e-6));
    CHECK(golden_angle(1, 0) == doctest::Approx(137.5078 * std::numbers::pi / 180.0).epsilon(1e-6));
    // Navigators do not consume an increment.
    CHECK(golden_angle(6, 6) == doctest::Approx(golden_angle(5, 0)).epsilon(1e-12));
}

TEST_CASE("three-gap property of golden-angle coverage") {
    for (int m : {7, 50, 123, 200}) {
        std::vector<double> a;
        for (int k = 0; k < m; ++k) a.push_back(std::fmod(golden_angle(k, 0), std::numbers::pi));
        std::sort(a.begin(), a.end());
        std::vector<double> gaps;
        for (int i = 0; i + 1 < m; ++i) gaps.push_back(a[i + 1] - a[i]);
        gaps.push_back(a.front() + std::numbers::pi - a.back());
        std::sort(gaps.begin(), gaps.end());
        std::vector<double> distinct{gaps.front()};
        for (double g : gaps)
            if (g - distinct.back() > 1e-9) distinct.push_back(g);
        CHECK(distinct.size() <= 3);
    }
}

TEST_CASE("spiral geometry") {
    const Trajectory t = make_spiral(128, 2.0, 32.0);
    REQUIRE(t.points.size() == 128);
    CHECK(t.points.front().kx == 0.0);
    CHECK(t.points.front().ky == 0.0);
    CHECK(std::hypot(t.points.back().kx, t.points.back().ky) == doctest::Approx(32.0).epsilon(1e-12));
    double sum = 0.0;
    for (std::size_t i = 0; i < t.points.size(); ++i) {
        CHECK(std::abs(t.points[i].kx) <= 32.0 + 1e-12);
        CHECK(std::abs(t.points[i].ky) <= 32.0 + 1e-12);
        CHECK(t.density_weights[i] > 0.0);
        sum += t.density_weights[i];
    }
    CHECK(sum / 128.0 == doctest::Approx(1.0).epsilon(1e-12));
    // Weights follow |k| with a floor of k_max / N at the centre sample.
    CHECK(t.density_weights[0] / t.density_weights[1] == doctest::Approx((32.0 / 128.0) / (32.0 / 127.0)).epsilon(1e-12));
    CHECK_THROWS_AS(make_spiral(128, 2.0, 0.0), ArgumentError);
    CHECK_THROWS_AS(make_spiral(4, 2.0, 1.0), ArgumentError);
}

TEST_CASE("rotation matches an explicit rotation matrix") {
    const Trajectory t = make_spiral(64, 1.5, 16.0);
    const double a = golden_angle(1, 0);
    const Trajectory r = t.rotated(a);
    for (std::size_t i = 0; i < t.points.size(); ++i) {
        const double x = t.points[i].kx, y = t.points[i].ky;
        CHECK(r.points[i].kx == doctest::Approx(std::cos(a) * x - std::sin(a) * y).epsilon(1e-12));
        CHECK(r.points[i].ky == doctest::Approx(std::sin(a) * x + std::cos(a) * y).epsilon(1e-12));
    }
    CHECK(r.density_weights == t.density_weights);
}

TEST_CASE("frame binning") {
    CHECK(bin_frames(3192, 6, false).frame_count() == 532);
    CHECK(bin_frames(13, 6, false).frame_count() == 2);
    const FrameBinning b = bin_frames(480, 5, true, 6);
    CHECK(b.frame_count() == 80);
    std::set<int> seen;
    for (const auto& f : b.frames) {
        CHECK(f.size() == 5);
        for (int k : f) {
            CHECK_FALSE(is_navigator(k, 6));
            CHECK(seen.insert(k).second);
        }
    }
    CHECK(seen.size() == 400);
    // Acquisition order within and across frames.
    CHECK(std::is_sorted(seen.begin(), seen.end()));
    CHECK(b.frames[0] == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(b.frames[1] == std::vector<int>{6, 7, 8, 9, 10});
}

TEST_CASE("coarsening merges consecutive frames") {
    const FrameBinning b = bin_frames(480, 5, true, 6);
    const FrameBinning c = coarsen(b, 4);
    CHECK(c.frame_count() == 20);
    CHECK(c.spirals_per_frame == 20);
    CHECK(c.frames[1].front() == b.frames[4].front());
    CHECK(coarsen(bin_frames(60, 6, false), 4).frame_count() == 2);
}

TEST_CASE("navigator interleaves share one trajectory") {
    SamplingConfig cfg;
    cfg.n_interleaves = 60;
    const auto all = interleave_trajectories(cfg, 32);
    for (int k = 5; k < 60; k += 6) CHECK(all[k] == all[5]);
    CHECK_FALSE(all[1] == all[5]);
    std::size_t n = all.front().points.size();
    for (const auto& t : all) CHECK(t.points.size() == n);
}

TEST_CASE("sampling config violations are collected") {
    SamplingConfig cfg;
    cfg.readout_points = 2;
    cfg.tr_s = 0.0;
    std::vector<std::string> v;
    cfg.validate(v);
    CHECK(v.size() == 2);
}

}
