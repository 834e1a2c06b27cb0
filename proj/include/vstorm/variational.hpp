#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace vstorm {

inline constexpr double log_std_min = -6.0;
inline constexpr double log_std_max = 2.0;

/// Diagonal Gaussian posterior per frame of one slice; rows are frames.
struct LatentTrack {
    int frames = 0;
    int dim = 0;
    std::vector<double> mu;      ///< frames x dim
    std::vector<double> log_std; ///< frames x dim, std = exp(log_std)

    std::span<double> mu_row(int t) { return {mu.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)}; }
    std::span<const double> mu_row(int t) const {
        return {mu.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<double> log_std_row(int t) {
        return {log_std.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<const double> log_std_row(int t) const {
        return {log_std.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim)};
    }
};

/// One track per slice, all with the same latent dimension.
struct LatentSchedule {
    int dim = 0;
    std::vector<LatentTrack> tracks;
};

/// mu ~ N(0, mu_sd^2), log_std = log_std_init.
LatentTrack init_track(int frames, int dim, std::uint64_t seed, double mu_sd = 0.1, double log_std_init = -2.0);

/// c = mu + exp(log_std) * eps
std::vector<double> sample_latent(std::span<const double> mu, std::span<const double> log_std,
                                  std::span<const double> eps);

/// KL(N(mu, diag(exp(2 log_std))) || N(0, I))
///   = 1/2 [ -sum 2 l - n + sum exp(2 l) + mu^T mu ]
double kl_gaussian(std::span<const double> mu, std::span<const double> log_std);

/// Adds scale * dKL/dmu and scale * dKL/dlog_std.
void kl_gaussian_grad(std::span<const double> mu, std::span<const double> log_std, double scale,
                      std::span<double> grad_mu, std::span<double> grad_log_std);

/// Sum over frames and dims of squared first differences of the mean track.
/// Fewer than two frames gives 0.
double temporal_penalty(const LatentTrack& track);

/// Adds scale * d(temporal_penalty)/dmu into grad_mu (frames x dim).
void temporal_penalty_grad(const LatentTrack& track, double scale, std::span<double> grad_mu);

/// Doubles the frame count of a track: even rows copy the coarse rows, odd
/// rows average their two neighbours, rows past the last pair repeat it.
LatentTrack refine_track(const LatentTrack& coarse, int fine_frames);

void clamp_log_std(LatentTrack& track);

} // namespace vstorm
