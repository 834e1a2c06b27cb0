#include "vstorm/phantom.hpp"

#include <cmath>
#include <numbers>

namespace vstorm {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

double slice_coordinate(int z, int nz) { return (2.0 * z + 1.0) / nz - 1.0; }

// Soft indicator of an ellipse cross-section, edge width in voxels.
double soft_inside(double u, double v, double w, const Ellipsoid& e, double scale_xy,
                   double vox_per_unit, double edge_vox) {
    const double rx = e.radii[0] * scale_xy;
    const double ry = e.radii[1] * scale_xy;
    const double du = (u - e.center[0]) / rx;
    const double dv = (v - e.center[1]) / ry;
    const double dw = (w - e.center[2]) / e.radii[2];
    const double q = std::sqrt(du * du + dv * dv + dw * dw);
    // Signed distance to the boundary, approximated along the radius, in voxels.
    const double dist = (1.0 - q) * std::min(rx, ry) * vox_per_unit;
    return 0.5 * (1.0 + std::tanh(dist / edge_vox));
}

void check_inside(const Ellipsoid& e, double margin_u, double margin_v, const std::string& key,
                  std::vector<std::string>& v) {
    if (e.radii[0] <= 0.0 || e.radii[1] <= 0.0 || e.radii[2] <= 0.0) {
        v.push_back(key + ".radii: must be positive");
        return;
    }
    if (std::abs(e.center[0]) + e.radii[0] + margin_u > 1.0 ||
        std::abs(e.center[1]) + e.radii[1] + margin_v > 1.0)
        v.push_back(key + ": ellipsoid (with respiratory excursion) leaves the field of view");
    if (e.intensity < 0.0) v.push_back(key + ".intensity: must be >= 0");
}

} // namespace

double wrap_phase(double radians) {
    double a = std::fmod(radians, two_pi);
    if (a < 0.0) a += two_pi;
    return a >= two_pi ? 0.0 : a;
}

void PhantomConfig::validate(std::vector<std::string>& v, const std::string& p) const {
    if (nx < 8) v.push_back(p + ".nx: must be >= 8");
    if (ny < 8) v.push_back(p + ".ny: must be >= 8");
    if (nz < 2) v.push_back(p + ".nz: must be >= 2");
    if (fov_mm <= 0.0) v.push_back(p + ".fov_mm: must be > 0");
    if (f_cardiac <= 0.0 || f_resp <= 0.0) v.push_back(p + ".f_cardiac/f_resp: must be > 0");
    if (!(f_resp < f_cardiac)) v.push_back(p + ".f_resp: must be below f_cardiac");
    if (static_cast<int>(slice_offsets_s.size()) != nz)
        v.push_back(p + ".slice_offsets_s: needs one entry per slice (nz = " + std::to_string(nz) + ")");
    for (double o : slice_offsets_s)
        if (o < 0.0) v.push_back(p + ".slice_offsets_s: offsets must be >= 0");
    if (contraction < 0.0 || contraction >= 1.0) v.push_back(p + ".contraction: must lie in [0, 1)");
    if (wall_motion < 0.0 || wall_motion >= 1.0) v.push_back(p + ".wall_motion: must lie in [0, 1)");
    if (edge_vox <= 0.0) v.push_back(p + ".edge_vox: must be > 0");
    const double margin_v = ny > 0 ? 2.0 * std::abs(resp_shift_vox) / ny : 0.0;
    check_inside(torso, 0.0, margin_v, p + ".torso", v);
    check_inside(liver, 0.0, margin_v, p + ".liver", v);
    check_inside(myocardium, 0.0, margin_v, p + ".myocardium", v);
    check_inside(blood_pool, 0.0, margin_v, p + ".blood_pool", v);
}

void PhantomConfig::validate() const {
    std::vector<std::string> v;
    validate(v);
    if (!v.empty()) throw ConfigError(v);
}

MotionState motion_state(const PhantomConfig& cfg, double t_abs, int slice_index) {
    if (slice_index < 0 || slice_index >= cfg.nz ||
        slice_index >= static_cast<int>(cfg.slice_offsets_s.size()))
        throw IndexError("slice index " + std::to_string(slice_index) + " out of range");
    if (t_abs < 0.0) throw ArgumentError("acquisition time must be >= 0");
    const double t = t_abs + cfg.slice_offsets_s[slice_index];
    return {wrap_phase(two_pi * cfg.f_cardiac * t), wrap_phase(two_pi * cfg.f_resp * t)};
}

Volume3D render_volume(const PhantomConfig& cfg, const MotionState& state) {
    const GridShape g = cfg.grid();
    Volume3D vol(g);
    // Fraction of the systolic excursion; 0 at phase 0, 1 at phase pi.
    const double systole = 0.5 * (1.0 - std::cos(state.cardiac));
    const double pool_scale = 1.0 - cfg.contraction * systole;
    const double wall_scale = 1.0 - cfg.wall_motion * systole;
    const double shift_vox = cfg.resp_shift_vox * std::sin(state.resp);
    const double half_x = 0.5 * g.nx;
    const double half_y = 0.5 * g.ny;
    const double vox_per_unit = std::min(half_x, half_y);

    for (int z = 0; z < g.nz; ++z) {
        const double w = slice_coordinate(z, g.nz);
        for (int y = 0; y < g.ny; ++y) {
            const double v = (y - shift_vox - half_y) / half_y;
            for (int x = 0; x < g.nx; ++x) {
                const double u = (x - half_x) / half_x;
                const double torso = soft_inside(u, v, w, cfg.torso, 1.0, vox_per_unit, cfg.edge_vox);
                const double liver = soft_inside(u, v, w, cfg.liver, 1.0, vox_per_unit, cfg.edge_vox);
                const double myo =
                    soft_inside(u, v, w, cfg.myocardium, wall_scale, vox_per_unit, cfg.edge_vox);
                const double pool =
                    soft_inside(u, v, w, cfg.blood_pool, pool_scale, vox_per_unit, cfg.edge_vox);
                // Later structures replace earlier ones where they overlap.
                double value = cfg.torso.intensity * torso;
                value += (cfg.liver.intensity - value) * liver;
                value += (cfg.myocardium.intensity - value) * myo;
                value += (cfg.blood_pool.intensity - value) * pool;
                vol.at(x, y, z) = value;
            }
        }
    }
    return vol;
}

double AcquisitionSchedule::frame_time(int frame) const {
    if (frame < 0 || frame >= binning.frame_count())
        throw IndexError("frame " + std::to_string(frame) + " not in schedule");
    const auto& members = binning.frames[frame];
    double sum = 0.0;
    for (int k : members) sum += k * tr_s;
    return sum / static_cast<double>(members.size());
}

const GroundTruthRecord& GroundTruth::at(int z, int t) const {
    if (z < 0 || z >= slices() || t < 0 || t >= static_cast<int>(records[z].size()))
        throw ConsistencyError("no ground truth for slice " + std::to_string(z) + ", frame " +
                               std::to_string(t));
    return records[z][t];
}

GroundTruth simulate_series(const PhantomConfig& cfg, const AcquisitionSchedule& schedule) {
    if (schedule.binning.frames.empty()) throw ArgumentError("acquisition schedule has no frames");
    cfg.validate();
    GroundTruth gt;
    gt.records.resize(cfg.nz);
    for (int z = 0; z < cfg.nz; ++z) {
        for (int t = 0; t < schedule.binning.frame_count(); ++t) {
            GroundTruthRecord r;
            r.slice = z;
            r.frame = t;
            r.time_s = schedule.frame_time(t);
            r.state = motion_state(cfg, r.time_s, z);
            r.volume = render_volume(cfg, r.state);
            gt.records[z].push_back(std::move(r));
        }
    }
    return gt;
}

} // namespace vstorm
