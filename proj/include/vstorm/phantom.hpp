#pragma once

#include <array>
#include <string>
#include <vector>

#include "vstorm/sampling.hpp"
#include "vstorm/volume.hpp"

namespace vstorm {

/// Axis-aligned ellipsoid in normalised coordinates: in-plane axes span
/// [-1, 1) across the grid, the slice axis spans [-1, 1] across the stack.
struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radii{};
    double intensity = 0.0;
    bool operator==(const Ellipsoid&) const = default;
};

struct PhantomConfig {
    int nx = 64;
    int ny = 64;
    int nz = 4;
    double fov_mm = 320.0;
    double f_cardiac = 1.25;
    double f_resp = 0.25;
    /// Acquisition start time of each slice; one entry per slice.
    std::vector<double> slice_offsets_s{0.0, 5.2, 10.6, 15.0};
    double resp_shift_vox = 3.0;
    /// Fractional blood-pool radius reduction at end systole.
    double contraction = 0.35;
    /// Fractional epicardial radius reduction at end systole.
    double wall_motion = 0.1;
    double edge_vox = 0.75;

    Ellipsoid torso{{0.0, 0.0, 0.0}, {0.85, 0.62, 3.0}, 0.35};
    Ellipsoid liver{{-0.38, 0.22, -0.55}, {0.32, 0.26, 0.8}, 0.55};
    Ellipsoid myocardium{{0.12, -0.12, 0.0}, {0.34, 0.32, 1.7}, 0.25};
    Ellipsoid blood_pool{{0.12, -0.12, 0.0}, {0.22, 0.21, 1.6}, 1.0};

    GridShape grid() const { return {nx, ny, nz}; }
    void validate(std::vector<std::string>& violations, const std::string& prefix = "phantom") const;
    /// Throws ConfigError listing every violation.
    void validate() const;
    bool operator==(const PhantomConfig&) const = default;
};

struct MotionState {
    double cardiac = 0.0; ///< radians in [0, 2pi)
    double resp = 0.0;    ///< radians in [0, 2pi)
};

double wrap_phase(double radians);

MotionState motion_state(const PhantomConfig& cfg, double t_abs, int slice_index);

/// Real, nonnegative volume. Blood-pool radius follows the cardiac phase
/// (smallest at pi); every structure shifts along y by resp_shift_vox * sin(resp).
Volume3D render_volume(const PhantomConfig& cfg, const MotionState& state);

/// Timing of one slice acquisition: interleave k is acquired at k * tr_s
/// after the slice start, and frames group interleaves.
struct AcquisitionSchedule {
    double tr_s = 0.0084;
    FrameBinning binning;

    double frame_time(int frame) const;
};

struct GroundTruthRecord {
    int slice = 0;
    int frame = 0;
    double time_s = 0.0;
    MotionState state;
    Volume3D volume;
};

/// records[z][t]
struct GroundTruth {
    std::vector<std::vector<GroundTruthRecord>> records;

    int slices() const { return static_cast<int>(records.size()); }
    const GroundTruthRecord& at(int z, int t) const;
};

GroundTruth simulate_series(const PhantomConfig& cfg, const AcquisitionSchedule& schedule);

} // namespace vstorm
