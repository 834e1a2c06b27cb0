#pragma once

#include <numbers>
#include <string>
#include <vector>

namespace vstorm {

/// 2*pi*(1 - 1/phi), about 137.5078 degrees.
inline constexpr double golden_angle_increment = 2.0 * std::numbers::pi * (1.0 - 1.0 / std::numbers::phi);

struct KPoint {
    double kx = 0.0;
    double ky = 0.0;
    bool operator==(const KPoint&) const = default;
};

/// One readout. Coordinates are in cycles/FOV, so |k| <= N/2 covers the Nyquist box.
struct Trajectory {
    std::vector<KPoint> points;
    double angle = 0.0;
    std::vector<double> density_weights;

    Trajectory rotated(double radians) const;
    bool operator==(const Trajectory&) const = default;
};

struct FrameBinning {
    std::vector<std::vector<int>> frames;
    int spirals_per_frame = 6;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

enum class TrajectoryKind { spiral, radial };

struct SamplingConfig {
    TrajectoryKind kind = TrajectoryKind::spiral;
    int n_interleaves = 480;
    int spirals_per_frame = 5;
    int navigator_every = 6;
    bool exclude_navigators = true;
    int readout_points = 128;
    double turns = 2.0;
    double k_max = 0.0; ///< cycles/FOV; 0 selects N/2 of the reconstruction grid
    double tr_s = 0.0084;

    void validate(std::vector<std::string>& violations, const std::string& prefix = "sampling") const;
    bool operator==(const SamplingConfig&) const = default;
};

bool is_navigator(int k, int navigator_every);

/// Angle of interleave k. Navigators sit at 0; other interleaves advance by
/// the golden angle counted over non-navigator interleaves only.
double golden_angle(int k, int navigator_every);

Trajectory make_spiral(int readout_points, double turns, double k_max);

/// Centre-out half spoke, same point count semantics as the spiral.
Trajectory make_radial(int readout_points, double k_max);

FrameBinning bin_frames(int n_interleaves, int spirals_per_frame, bool exclude_navigators,
                        int navigator_every = 6);

/// All interleaves of one slice acquisition, rotated to their angles.
std::vector<Trajectory> interleave_trajectories(const SamplingConfig& cfg, int grid_n);

/// Groups `factor` consecutive frames into one. Trailing frames that do not
/// fill a group are dropped.
FrameBinning coarsen(const FrameBinning& fine, int factor);

} // namespace vstorm
