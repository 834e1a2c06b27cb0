#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vstorm/encoding.hpp"
#include "vstorm/generator.hpp"
#include "vstorm/variational.hpp"

namespace vstorm {

enum class TrainMode { vstorm_ms, gstorm_ms, vstorm_ss, gstorm_ss };

std::string to_string(TrainMode mode);
/// Accepts "V-SToRM:MS", "G-SToRM:MS", "V-SToRM:SS", "G-SToRM:SS".
TrainMode parse_mode(const std::string& name);
bool is_variational(TrainMode mode);
bool is_multislice(TrainMode mode);

struct AdamConfig {
    double lr = 3e-3;        ///< generator weights
    double latent_lr = 1e-2; ///< latent means and log-stds
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// One bias-corrected Adam step on x.
void adam_update(std::span<double> x, std::span<const double> grad, AdamState& state, double lr,
                 const AdamConfig& cfg);

struct TrainConfig {
    /// Weight on the KL term. With relative_weights it is multiplied by the
    /// mean per-frame measurement energy divided by the latent dimension.
    double sigma2 = 1e-2;
    double lambda1 = 1e-8;
    /// Weight on the temporal penalty; scaled by the mean per-frame energy
    /// when relative_weights is set.
    double lambda2 = 1e-2;
    bool relative_weights = true;
    /// (sum |theta|)^2 when set, plain sum |theta| otherwise.
    bool l1_squared = true;
    AdamConfig adam;
    int iterations = 1500;
    int stages = 3;
    std::vector<double> stage_split{0.4, 0.3, 0.3};
    int batch = 8;
    TrainMode mode = TrainMode::vstorm_ms;
    std::uint64_t seed = 1;
    bool zero_epsilon = false;
    bool freeze_log_std = false;
    double mu_init_sd = 0.1;
    double log_std_init = -2.0;
    int checkpoint_every = 0;

    void validate(std::vector<std::string>& violations, const std::string& prefix = "train") const;
    bool operator==(const TrainConfig&) const = default;
};

/// Absolute loss weights after data-energy scaling.
struct LossWeights {
    double sigma2 = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    bool l1_squared = true;
    bool variational = true;
};

struct LossTerms {
    double total = 0.0;
    double data = 0.0;
    double kl = 0.0;     ///< sigma2-weighted
    double l1 = 0.0;     ///< lambda1-weighted
    double smooth = 0.0; ///< lambda2-weighted
};

struct LossRecord {
    long iteration = 0;
    LossTerms terms;
};

/// (track position in the objective, frame index)
struct FrameRef {
    int track = 0;
    int frame = 0;
};

struct Gradient {
    std::vector<double> theta;
    std::vector<std::vector<double>> mu;
    std::vector<std::vector<double>> log_std;
};

/// Measurement operators and data for a set of slices at one temporal
/// binning. Track k of a LatentSchedule pairs with slices()[k].
class Objective {
public:
    Objective(std::vector<KTSlice> slices, std::shared_ptr<const CoilMaps> maps,
              TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

    const std::vector<KTSlice>& slices() const { return slices_; }
    const EncodingOperator& op(int track, int frame) const;
    const std::shared_ptr<const CoilMaps>& maps() const { return maps_; }
    int total_frames() const;
    std::vector<int> frame_counts() const;
    /// Mean over frames of ||b||^2.
    double mean_frame_energy() const;

    /// sum over refs of ||A D(mu + std*eps) - b||^2; eps is refs.size() x dim.
    double data_term(const GeneratorParams& params, const LatentSchedule& latents, std::span<const FrameRef> refs,
                     std::span<const double> eps) const;

    LossTerms total_loss(const GeneratorParams& params, const LatentSchedule& latents,
                         std::span<const FrameRef> refs, std::span<const double> eps, const LossWeights& w) const;

    /// Loss and its exact gradient with respect to theta, mu and log_std.
    LossTerms gradient(const GeneratorParams& params, const LatentSchedule& latents, std::span<const FrameRef> refs,
                       std::span<const double> eps, const LossWeights& w, Gradient& grad) const;

private:
    void check_refs(const LatentSchedule& latents, std::span<const FrameRef> refs, std::span<const double> eps) const;
    LossTerms regularizers(const GeneratorParams& params, const LatentSchedule& latents,
                           std::span<const FrameRef> refs, const LossWeights& w) const;

    std::vector<KTSlice> slices_;
    std::shared_ptr<const CoilMaps> maps_;
    std::vector<std::vector<EncodingOperator>> ops_;
};

struct TrainState {
    GeneratorParams params;
    LatentSchedule latents;
    AdamState theta_opt;
    std::vector<AdamState> mu_opt;
    std::vector<AdamState> log_std_opt;
    long iteration = 0;
    std::vector<LossRecord> history;
};

LossWeights effective_weights(const TrainConfig& cfg, double mean_frame_energy, int latent_dim);

TrainState init_state(const Architecture& arch, const std::vector<int>& frames_per_track, const TrainConfig& cfg);

/// Frame minibatch and standard-normal draws for one iteration; a pure
/// function of (seed, iteration). eps is zeroed for non-variational modes.
void draw_minibatch(const Objective& obj, const TrainConfig& cfg, long iteration, int latent_dim,
                    std::vector<FrameRef>& refs, std::vector<double>& eps);

/// One Adam step on theta, mu and (variational modes) log_std.
/// Throws NumericError on a non-finite loss.
void train_step(TrainState& state, const Objective& obj, const TrainConfig& cfg, const LossWeights& w);

/// Called with the state and the model index (always 0 for multislice).
using CheckpointHook = std::function<void(const TrainState&, int model)>;

/// Coarse-to-fine training. `slices` are at the finest binning; stage s of S
/// merges 2^(S-s) frames. Latent tracks are refined between stages; the
/// generator and its Adam moments carry over.
TrainState progressive_train(const std::vector<KTSlice>& slices, std::shared_ptr<const CoilMaps> maps,
                             const Architecture& arch, const TrainConfig& cfg,
                             const CheckpointHook& on_checkpoint = {}, int model_index = 0,
                             TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

/// Multislice modes return one state; single-slice modes train one model per
/// slice on that slice's data alone.
std::vector<TrainState> train_models(const std::vector<KTSlice>& slices, std::shared_ptr<const CoilMaps> maps,
                                     const Architecture& arch, const TrainConfig& cfg,
                                     const CheckpointHook& on_checkpoint = {},
                                     TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

} // namespace vstorm
