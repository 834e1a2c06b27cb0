#include "vstorm/variational.hpp"

#include <cmath>
#include <iostream>
#include <random>

#include "vstorm/error.hpp"

namespace vstorm {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": dimension mismatch");
}

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
}

} // namespace

LatentTrack init_track(int frames, int dim, std::uint64_t seed, double mu_sd, double log_std_init) {
    if (frames < 1 || dim < 1) throw ArgumentError("latent track needs frames >= 1 and dim >= 1");
    LatentTrack t;
    t.frames = frames;
    t.dim = dim;
    t.mu.resize(static_cast<std::size_t>(frames) * dim);
    t.log_std.assign(t.mu.size(), log_std_init);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, mu_sd);
    for (auto& m : t.mu) m = normal(rng);
    return t;
}

std::vector<double> sample_latent(std::span<const double> mu, std::span<const double> log_std,
                                  std::span<const double> eps) {
    check_same(mu.size(), log_std.size(), "sample_latent");
    check_same(mu.size(), eps.size(), "sample_latent");
    std::vector<double> c(mu.size());
    for (std::size_t j = 0; j < mu.size(); ++j) c[j] = mu[j] + std::exp(log_std[j]) * eps[j];
    return c;
}

double kl_gaussian(std::span<const double> mu, std::span<const double> log_std) {
    check_same(mu.size(), log_std.size(), "kl_gaussian");
    check_finite(mu, "kl_gaussian");
    check_finite(log_std, "kl_gaussian");
    // Per-dimension form keeps each term >= 0: e^{2l} - 1 - 2l >= 0.
    double kl = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
        const double l2 = 2.0 * log_std[j];
        kl += std::expm1(l2) - l2 + mu[j] * mu[j];
    }
    return 0.5 * kl;
}

void kl_gaussian_grad(std::span<const double> mu, std::span<const double> log_std, double scale,
                      std::span<double> grad_mu, std::span<double> grad_log_std) {
    check_same(mu.size(), log_std.size(), "kl_gaussian_grad");
    check_same(mu.size(), grad_mu.size(), "kl_gaussian_grad");
    check_same(mu.size(), grad_log_std.size(), "kl_gaussian_grad");
    for (std::size_t j = 0; j < mu.size(); ++j) {
        grad_mu[j] += scale * mu[j];
        grad_log_std[j] += scale * std::expm1(2.0 * log_std[j]);
    }
}

double temporal_penalty(const LatentTrack& track) {
    if (track.frames < 2) {
        std::cerr << "warning: temporal penalty on a track with fewer than 2 frames is 0\n";
        return 0.0;
    }
    double s = 0.0;
    for (int t = 1; t < track.frames; ++t) {
        auto a = track.mu_row(t - 1);
        auto b = track.mu_row(t);
        for (int j = 0; j < track.dim; ++j) s += (b[j] - a[j]) * (b[j] - a[j]);
    }
    return s;
}

void temporal_penalty_grad(const LatentTrack& track, double scale, std::span<double> grad_mu) {
    check_same(grad_mu.size(), track.mu.size(), "temporal_penalty_grad");
    for (int t = 1; t < track.frames; ++t) {
        for (int j = 0; j < track.dim; ++j) {
            const double d = 2.0 * scale * (track.mu[t * track.dim + j] - track.mu[(t - 1) * track.dim + j]);
            grad_mu[t * track.dim + j] += d;
            grad_mu[(t - 1) * track.dim + j] -= d;
        }
    }
}

LatentTrack refine_track(const LatentTrack& coarse, int fine_frames) {
    if (fine_frames < coarse.frames) throw ArgumentError("refined track cannot have fewer frames");
    LatentTrack f;
    f.frames = fine_frames;
    f.dim = coarse.dim;
    f.mu.resize(static_cast<std::size_t>(fine_frames) * coarse.dim);
    f.log_std.resize(f.mu.size());
    const int last = coarse.frames - 1;
    for (int t = 0; t < fine_frames; ++t) {
        const int i = t / 2;
        for (int j = 0; j < coarse.dim; ++j) {
            double m, l;
            if (i >= last) {
                m = coarse.mu[last * coarse.dim + j];
                l = coarse.log_std[last * coarse.dim + j];
            } else if (t % 2 == 0) {
                m = coarse.mu[i * coarse.dim + j];
                l = coarse.log_std[i * coarse.dim + j];
            } else {
                m = 0.5 * (coarse.mu[i * coarse.dim + j] + coarse.mu[(i + 1) * coarse.dim + j]);
                l = 0.5 * (coarse.log_std[i * coarse.dim + j] + coarse.log_std[(i + 1) * coarse.dim + j]);
            }
            f.mu[t * coarse.dim + j] = m;
            f.log_std[t * coarse.dim + j] = l;
        }
    }
    return f;
}

void clamp_log_std(LatentTrack& track) {
    for (auto& l : track.log_std) l = std::clamp(l, log_std_min, log_std_max);
}

} // namespace vstorm
