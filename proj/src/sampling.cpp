#include "vstorm/sampling.hpp"

#include <cmath>

#include "vstorm/error.hpp"

namespace vstorm {

namespace {

double wrap_two_pi(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    return a < 0.0 ? a + two_pi : a;
}

void ramp_weights(Trajectory& t, double k_max) {
    const double floor = k_max / static_cast<double>(t.points.size());
    t.density_weights.resize(t.points.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < t.points.size(); ++i) {
        const double r = std::hypot(t.points[i].kx, t.points[i].ky);
        t.density_weights[i] = std::max(r, floor);
        sum += t.density_weights[i];
    }
    const double mean = sum / static_cast<double>(t.points.size());
    for (auto& w : t.density_weights) w /= mean;
}

} // namespace

Trajectory Trajectory::rotated(double radians) const {
    Trajectory out = *this;
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    for (auto& p : out.points) {
        const KPoint q = p;
        p.kx = c * q.kx - s * q.ky;
        p.ky = s * q.kx + c * q.ky;
    }
    out.angle = wrap_two_pi(angle + radians);
    return out;
}

bool is_navigator(int k, int navigator_every) {
    return navigator_every > 0 && k % navigator_every == navigator_every - 1;
}

double golden_angle(int k, int navigator_every) {
    if (is_navigator(k, navigator_every)) return 0.0;
    // Number of imaging interleaves acquired before k.
    const long m = navigator_every > 0 ? k - k / navigator_every : k;
    // Reduce the product exactly in long double before wrapping.
    const long double a = static_cast<long double>(m) * static_cast<long double>(golden_angle_increment);
    const long double two_pi = 2.0L * std::numbers::pi_v<long double>;
    return wrap_two_pi(static_cast<double>(std::fmod(a, two_pi)));
}

Trajectory make_spiral(int readout_points, double turns, double k_max) {
    if (k_max <= 0.0) throw ArgumentError("spiral k_max must be positive");
    if (readout_points < 8) throw ArgumentError("spiral needs at least 8 readout points");
    if (turns <= 0.0) throw ArgumentError("spiral turns must be positive");
    Trajectory t;
    t.points.resize(readout_points);
    for (int i = 0; i < readout_points; ++i) {
        const double s = static_cast<double>(i) / (readout_points - 1);
        const double r = k_max * s;
        const double theta = 2.0 * std::numbers::pi * turns * s;
        t.points[i] = {r * std::cos(theta), r * std::sin(theta)};
    }
    ramp_weights(t, k_max);
    return t;
}

Trajectory make_radial(int readout_points, double k_max) {
    if (k_max <= 0.0) throw ArgumentError("radial k_max must be positive");
    if (readout_points < 8) throw ArgumentError("radial spoke needs at least 8 readout points");
    Trajectory t;
    t.points.resize(readout_points);
    for (int i = 0; i < readout_points; ++i)
        t.points[i] = {k_max * static_cast<double>(i) / (readout_points - 1), 0.0};
    ramp_weights(t, k_max);
    return t;
}

FrameBinning bin_frames(int n_interleaves, int spirals_per_frame, bool exclude_navigators,
                        int navigator_every) {
    if (spirals_per_frame < 1 || n_interleaves < spirals_per_frame)
        throw ArgumentError("binning needs n_interleaves >= spirals_per_frame >= 1");
    FrameBinning b;
    b.spirals_per_frame = spirals_per_frame;
    std::vector<int> current;
    for (int k = 0; k < n_interleaves; ++k) {
        if (exclude_navigators && is_navigator(k, navigator_every)) continue;
        current.push_back(k);
        if (static_cast<int>(current.size()) == spirals_per_frame) {
            b.frames.push_back(std::move(current));
            current.clear();
        }
    }
    return b;
}

std::vector<Trajectory> interleave_trajectories(const SamplingConfig& cfg, int grid_n) {
    const double k_max = cfg.k_max > 0.0 ? cfg.k_max : grid_n / 2.0;
    const Trajectory base = cfg.kind == TrajectoryKind::spiral
                                ? make_spiral(cfg.readout_points, cfg.turns, k_max)
                                : make_radial(cfg.readout_points, k_max);
    std::vector<Trajectory> out;
    out.reserve(cfg.n_interleaves);
    for (int k = 0; k < cfg.n_interleaves; ++k)
        out.push_back(base.rotated(golden_angle(k, cfg.navigator_every)));
    return out;
}

FrameBinning coarsen(const FrameBinning& fine, int factor) {
    if (factor < 1) throw ArgumentError("coarsening factor must be >= 1");
    FrameBinning out;
    out.spirals_per_frame = fine.spirals_per_frame * factor;
    for (int f = 0; f + factor <= fine.frame_count(); f += factor) {
        std::vector<int> group;
        for (int j = 0; j < factor; ++j)
            group.insert(group.end(), fine.frames[f + j].begin(), fine.frames[f + j].end());
        out.frames.push_back(std::move(group));
    }
    return out;
}

void SamplingConfig::validate(std::vector<std::string>& v, const std::string& p) const {
    if (readout_points < 8) v.push_back(p + ".readout_points: must be >= 8");
    if (turns <= 0.0) v.push_back(p + ".turns: must be > 0");
    if (k_max < 0.0) v.push_back(p + ".k_max: must be >= 0 (0 selects N/2)");
    if (spirals_per_frame < 1) v.push_back(p + ".spirals_per_frame: must be >= 1");
    if (n_interleaves < spirals_per_frame)
        v.push_back(p + ".n_interleaves: must be >= spirals_per_frame");
    if (navigator_every < 0) v.push_back(p + ".navigator_every: must be >= 0");
    if (tr_s <= 0.0) v.push_back(p + ".tr_s: must be > 0");
}

} // namespace vstorm
