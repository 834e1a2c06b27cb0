#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vstorm/generator.hpp"
#include "vstorm/phantom.hpp"
#include "vstorm/training.hpp"
#include "vstorm/variational.hpp"
#include "vstorm/volume.hpp"

namespace vstorm {

struct SerResult {
    double db = 0.0;
    bool saturated = false; ///< recon equals truth; db is +inf
};

/// 10 log10(||truth||^2 / ||recon - truth||^2) on magnitude images over the
/// whole series.
SerResult ser_db(const ImageSeries& recon, const ImageSeries& truth);

/// Single-slice volumes (nz = 1) holding slice z of every frame.
ImageSeries slice_series(const ImageSeries& series, int z);

/// Decodes the mean track of one slice frame by frame (eps = 0).
ImageSeries reconstruct_track(const GeneratorParams& params, const LatentTrack& track);

/// Full-volume series decoded from the mean track of `source`.
ImageSeries cross_excite(const GeneratorParams& params, const LatentSchedule& latents, int source);

/// Latent points pooled over frames, row-major (points x dim). With
/// `sample` each frame contributes `draws` reparameterized samples from a
/// fixed-seed stream; otherwise each frame contributes its mean once.
std::vector<double> latent_points(const LatentTrack& track, bool sample, int draws, std::uint64_t seed);

/// Symmetric KL between full-covariance Gaussians fitted to two point sets
/// (rows x dim), covariance regularized by reg * I.
double gaussian_symmetric_kl(std::span<const double> a, std::span<const double> b, int dim, double reg = 1e-6);

double latent_divergence(const LatentTrack& a, const LatentTrack& b, bool sample = true, int draws = 16,
                         std::uint64_t seed = 17);

/// Shortest angular distance, in [0, pi].
double circular_distance(double a, double b);
/// Cardiac images depend only on cos(phase): phi and -phi are equivalent.
double cardiac_phase_error(double estimate, double truth);
/// Respiratory images depend only on sin(phase): phi and pi - phi are equivalent.
double resp_phase_error(double estimate, double truth);

/// Rendered magnitude volumes on a bins x bins grid of (cardiac, resp)
/// phases at bin centres k * 2pi / bins.
class PhaseDictionary {
public:
    PhaseDictionary(const PhantomConfig& cfg, int bins = 16);

    int bins() const { return bins_; }
    double bin_width() const;
    const MotionState& state(int entry) const { return states_[entry]; }
    int size() const { return static_cast<int>(states_.size()); }

    /// Entry with the highest normalized cross-correlation against the
    /// magnitude of slice z of `volume`.
    int match(const Volume3D& volume, int z) const;

private:
    int bins_;
    GridShape shape_;
    std::vector<MotionState> states_;
    std::vector<std::vector<double>> normalized_; // per entry, zero-mean unit-norm slices, z-major
};

struct PhaseStats {
    double cardiac_mean = 0.0;
    double cardiac_p95 = 0.0;
    double resp_mean = 0.0;
    double resp_p95 = 0.0;
};

/// Per-slice phase recovery error of a series against the motion states of
/// the frames it was decoded for. Errors within half a dictionary bin are
/// reported as zero.
std::vector<PhaseStats> phase_alignment_error(const ImageSeries& recon, const std::vector<MotionState>& truth,
                                              const PhaseDictionary& dictionary);

struct EvaluationConfig {
    int source_slice = 1;
    int dictionary_bins = 16;
    int divergence_draws = 16;
    std::uint64_t divergence_seed = 17;
    void validate(std::vector<std::string>& violations, const std::string& prefix = "evaluation") const;
    bool operator==(const EvaluationConfig&) const = default;
};

struct ReconReport {
    std::string mode;
    int source_slice = 1;
    std::vector<SerResult> ser;                    ///< per slice, own latents
    std::vector<std::vector<double>> divergence;   ///< slice x slice
    std::vector<std::vector<SerResult>> cross_ser; ///< source x target
    std::vector<PhaseStats> phase;                 ///< per slice, cross-excited from source_slice

    double max_divergence() const;
    /// Mean over targets other than the source of own SER minus cross SER.
    double cross_drop() const;
    std::string to_text() const;
};

/// Trained models of one run: one state for multislice modes, one per slice
/// for single-slice modes.
struct ModelSet {
    TrainMode mode = TrainMode::vstorm_ms;
    std::vector<TrainState> states;

    int slices() const;
    const GeneratorParams& decoder_for(int slice) const;
    const LatentTrack& track_for(int slice) const;
};

/// Decodes slice z of every frame with `track`, using the decoder of `target`.
ImageSeries decode_series(const ModelSet& models, int target, const LatentTrack& track);

ReconReport evaluate(const ModelSet& models, const GroundTruth& truth, const PhantomConfig& phantom,
                     const EvaluationConfig& cfg);

} // namespace vstorm
