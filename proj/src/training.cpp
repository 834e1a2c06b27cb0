#include "vstorm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace vstorm {

std::string to_string(TrainMode mode) {
    switch (mode) {
    case TrainMode::vstorm_ms: return "V-SToRM:MS";
    case TrainMode::gstorm_ms: return "G-SToRM:MS";
    case TrainMode::vstorm_ss: return "V-SToRM:SS";
    case TrainMode::gstorm_ss: return "G-SToRM:SS";
    }
    return "?";
}

TrainMode parse_mode(const std::string& name) {
    for (TrainMode m : {TrainMode::vstorm_ms, TrainMode::gstorm_ms, TrainMode::vstorm_ss, TrainMode::gstorm_ss})
        if (to_string(m) == name) return m;
    throw ConfigError("train.mode: unknown mode '" + name + "'");
}

bool is_variational(TrainMode m) { return m == TrainMode::vstorm_ms || m == TrainMode::vstorm_ss; }
bool is_multislice(TrainMode m) { return m == TrainMode::vstorm_ms || m == TrainMode::gstorm_ms; }

void adam_update(std::span<double> x, std::span<const double> grad, AdamState& s, double lr, const AdamConfig& cfg) {
    if (grad.size() != x.size()) throw ShapeError("adam: gradient size mismatch");
    if (s.m.size() != x.size()) {
        s.m.assign(x.size(), 0.0);
        s.v.assign(x.size(), 0.0);
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < x.size(); ++i) {
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grad[i];
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        x[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg.eps);
    }
}

void TrainConfig::validate(std::vector<std::string>& v, const std::string& p) const {
    if (sigma2 < 0.0) v.push_back(p + ".sigma2: must be >= 0");
    if (lambda1 < 0.0) v.push_back(p + ".lambda1: must be >= 0");
    if (lambda2 < 0.0) v.push_back(p + ".lambda2: must be >= 0");
    if (adam.lr <= 0.0 || adam.latent_lr <= 0.0) v.push_back(p + ".adam: learning rates must be > 0");
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0)
        v.push_back(p + ".adam: betas must lie in [0, 1)");
    if (adam.eps <= 0.0) v.push_back(p + ".adam.eps: must be > 0");
    if (iterations < 0) v.push_back(p + ".iterations: must be >= 0");
    if (stages < 1) v.push_back(p + ".stages: must be >= 1");
    if (!stage_split.empty() && static_cast<int>(stage_split.size()) != stages)
        v.push_back(p + ".stage_split: needs one fraction per stage");
    for (double f : stage_split)
        if (f < 0.0) v.push_back(p + ".stage_split: fractions must be >= 0");
    if (batch < 1) v.push_back(p + ".batch: must be >= 1");
    if (mu_init_sd < 0.0) v.push_back(p + ".mu_init_sd: must be >= 0");
    if (log_std_init < log_std_min || log_std_init > log_std_max)
        v.push_back(p + ".log_std_init: must lie in [-6, 2]");
    if (checkpoint_every < 0) v.push_back(p + ".checkpoint_every: must be >= 0");
}

Objective::Objective(std::vector<KTSlice> slices, std::shared_ptr<const CoilMaps> maps, TransformMode mode,
                     GriddingParams gridding)
    : slices_(std::move(slices)), maps_(std::move(maps)) {
    if (!maps_) throw ArgumentError("objective needs coil maps");
    for (const auto& kt : slices_) {
        std::vector<EncodingOperator> ops;
        ops.reserve(kt.frames.size());
        for (int t = 0; t < kt.frame_count(); ++t) ops.push_back(make_operator(kt, t, maps_, mode, gridding));
        ops_.push_back(std::move(ops));
    }
}

const EncodingOperator& Objective::op(int track, int frame) const {
    if (track < 0 || track >= static_cast<int>(ops_.size()) || frame < 0 ||
        frame >= static_cast<int>(ops_[track].size()))
        throw ConsistencyError("no frame " + std::to_string(frame) + " for track " + std::to_string(track));
    return ops_[track][frame];
}

int Objective::total_frames() const {
    int n = 0;
    for (const auto& kt : slices_) n += kt.frame_count();
    return n;
}

std::vector<int> Objective::frame_counts() const {
    std::vector<int> n;
    for (const auto& kt : slices_) n.push_back(kt.frame_count());
    return n;
}

double Objective::mean_frame_energy() const {
    double e = 0.0;
    int n = 0;
    for (const auto& kt : slices_)
        for (const auto& f : kt.frames) {
            for (const auto& b : f.data) e += std::norm(b);
            ++n;
        }
    return n > 0 ? e / n : 0.0;
}

void Objective::check_refs(const LatentSchedule& latents, std::span<const FrameRef> refs,
                           std::span<const double> eps) const {
    if (latents.tracks.size() != slices_.size())
        throw ConsistencyError("latent schedule has " + std::to_string(latents.tracks.size()) + " tracks for " +
                               std::to_string(slices_.size()) + " slices");
    if (eps.size() != refs.size() * static_cast<std::size_t>(latents.dim))
        throw ShapeError("need one latent-dimension noise draw per selected frame");
    for (const auto& r : refs) {
        op(r.track, r.frame);
        if (r.frame >= latents.tracks[r.track].frames)
            throw ConsistencyError("latent track shorter than the measured frames");
    }
}

double Objective::data_term(const GeneratorParams& params, const LatentSchedule& latents,
                            std::span<const FrameRef> refs, std::span<const double> eps) const {
    check_refs(latents, refs, eps);
    Decoder dec(params.arch);
    const std::size_t n = maps_->shape.slice_size();
    std::vector<cdouble> image(n);
    double total = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& r = refs[i];
        const LatentTrack& tr = latents.tracks[r.track];
        const auto c = sample_latent(tr.mu_row(r.frame), tr.log_std_row(r.frame),
                                     eps.subspan(i * latents.dim, latents.dim));
        dec.forward(params, c);
        const EncodingOperator& A = op(r.track, r.frame);
        dec.slice(A.slice_index(), image);
        std::vector<cdouble> y(A.measurement_size());
        A.forward_slice(image, y);
        const auto& b = slices_[r.track].frames[r.frame].data;
        for (std::size_t j = 0; j < y.size(); ++j) total += std::norm(y[j] - b[j]);
    }
    return total;
}

LossTerms Objective::regularizers(const GeneratorParams& params, const LatentSchedule& latents,
                                  std::span<const FrameRef> refs, const LossWeights& w) const {
    LossTerms t;
    if (w.variational) {
        double kl = 0.0;
        for (const auto& r : refs) {
            const LatentTrack& tr = latents.tracks[r.track];
            kl += kl_gaussian(tr.mu_row(r.frame), tr.log_std_row(r.frame));
        }
        t.kl = w.sigma2 * kl;
    }
    double l1 = 0.0;
    for (double v : params.values) l1 += std::abs(v);
    t.l1 = w.lambda1 * (w.l1_squared ? l1 * l1 : l1);
    double smooth = 0.0;
    for (const auto& tr : latents.tracks)
        if (tr.frames >= 2) smooth += temporal_penalty(tr);
    t.smooth = w.lambda2 * smooth;
    return t;
}

LossTerms Objective::total_loss(const GeneratorParams& params, const LatentSchedule& latents,
                                std::span<const FrameRef> refs, std::span<const double> eps,
                                const LossWeights& w) const {
    LossTerms t = regularizers(params, latents, refs, w);
    // Non-variational modes decode the means.
    std::vector<double> zeros;
    if (!w.variational) zeros.assign(eps.size(), 0.0);
    t.data = data_term(params, latents, refs, w.variational ? eps : std::span<const double>(zeros));
    t.total = t.data + t.kl + t.l1 + t.smooth;
    return t;
}

LossTerms Objective::gradient(const GeneratorParams& params, const LatentSchedule& latents,
                              std::span<const FrameRef> refs, std::span<const double> eps, const LossWeights& w,
                              Gradient& g) const {
    check_refs(latents, refs, eps);
    g.theta.assign(params.count(), 0.0);
    g.mu.resize(latents.tracks.size());
    g.log_std.resize(latents.tracks.size());
    for (std::size_t k = 0; k < latents.tracks.size(); ++k) {
        g.mu[k].assign(latents.tracks[k].mu.size(), 0.0);
        g.log_std[k].assign(latents.tracks[k].log_std.size(), 0.0);
    }

    const int dim = latents.dim;
    const int nz = params.arch.nz;
    const std::size_t n = maps_->shape.slice_size();
    Decoder dec(params.arch);
    std::vector<cdouble> image(n), back(n);
    std::vector<double> out_grad(2 * n * nz, 0.0), grad_c(dim);
    double data = 0.0;

    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& r = refs[i];
        const LatentTrack& tr = latents.tracks[r.track];
        std::vector<double> e(dim, 0.0);
        if (w.variational) std::copy_n(eps.begin() + i * dim, dim, e.begin());
        const auto c = sample_latent(tr.mu_row(r.frame), tr.log_std_row(r.frame), e);
        dec.forward(params, c);
        const EncodingOperator& A = op(r.track, r.frame);
        const int z = A.slice_index();
        dec.slice(z, image);
        std::vector<cdouble> res(A.measurement_size());
        A.forward_slice(image, res);
        const auto& b = slices_[r.track].frames[r.frame].data;
        for (std::size_t j = 0; j < res.size(); ++j) {
            res[j] -= b[j];
            data += std::norm(res[j]);
        }
        // d||r||^2/d(re x) = 2 Re(A^H r), d/d(im x) = 2 Im(A^H r)
        A.adjoint_slice(res, back);
        std::fill(out_grad.begin(), out_grad.end(), 0.0);
        for (std::size_t p = 0; p < n; ++p) {
            out_grad[z * n + p] = 2.0 * back[p].real();
            out_grad[(nz + z) * n + p] = 2.0 * back[p].imag();
        }
        dec.backward(params, out_grad, g.theta, grad_c);
        auto log_std = tr.log_std_row(r.frame);
        for (int j = 0; j < dim; ++j) {
            g.mu[r.track][r.frame * dim + j] += grad_c[j];
            g.log_std[r.track][r.frame * dim + j] += grad_c[j] * std::exp(log_std[j]) * e[j];
        }
    }

    LossTerms t = regularizers(params, latents, refs, w);
    t.data = data;
    t.total = t.data + t.kl + t.l1 + t.smooth;

    if (w.variational)
        for (const auto& r : refs) {
            const LatentTrack& tr = latents.tracks[r.track];
            const std::size_t off = static_cast<std::size_t>(r.frame) * dim;
            kl_gaussian_grad(tr.mu_row(r.frame), tr.log_std_row(r.frame), w.sigma2,
                             std::span<double>(g.mu[r.track]).subspan(off, dim),
                             std::span<double>(g.log_std[r.track]).subspan(off, dim));
        }
    if (w.lambda1 > 0.0) {
        double l1 = 0.0;
        for (double v : params.values) l1 += std::abs(v);
        const double scale = w.l1_squared ? 2.0 * w.lambda1 * l1 : w.lambda1;
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            const double v = params.values[i];
            g.theta[i] += scale * static_cast<double>((v > 0.0) - (v < 0.0));
        }
    }
    if (w.lambda2 > 0.0)
        for (std::size_t k = 0; k < latents.tracks.size(); ++k)
            temporal_penalty_grad(latents.tracks[k], w.lambda2, g.mu[k]);
    return t;
}

LossWeights effective_weights(const TrainConfig& cfg, double energy, int latent_dim) {
    LossWeights w;
    w.variational = is_variational(cfg.mode);
    w.l1_squared = cfg.l1_squared;
    w.lambda1 = cfg.lambda1;
    const double scale = cfg.relative_weights ? energy : 1.0;
    w.sigma2 = w.variational ? cfg.sigma2 * scale / (cfg.relative_weights ? latent_dim : 1) : 0.0;
    w.lambda2 = cfg.lambda2 * scale;
    return w;
}

TrainState init_state(const Architecture& arch, const std::vector<int>& frames_per_track, const TrainConfig& cfg) {
    TrainState s;
    s.params = init_params(arch, cfg.seed);
    s.latents.dim = arch.latent_dim;
    for (std::size_t k = 0; k < frames_per_track.size(); ++k) {
        s.latents.tracks.push_back(init_track(frames_per_track[k], arch.latent_dim,
                                              cfg.seed * 1000003ULL + 7919ULL * (k + 1), cfg.mu_init_sd,
                                              cfg.log_std_init));
    }
    s.mu_opt.resize(frames_per_track.size());
    s.log_std_opt.resize(frames_per_track.size());
    return s;
}

void draw_minibatch(const Objective& obj, const TrainConfig& cfg, long iteration, int dim,
                    std::vector<FrameRef>& refs, std::vector<double>& eps) {
    std::vector<FrameRef> all;
    const auto counts = obj.frame_counts();
    for (std::size_t k = 0; k < counts.size(); ++k)
        for (int t = 0; t < counts[k]; ++t) all.push_back({static_cast<int>(k), t});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32)};
    std::mt19937_64 rng(seq);
    const int b = std::min<int>(cfg.batch, static_cast<int>(all.size()));
    for (int i = 0; i < b; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
        std::swap(all[i], all[pick(rng)]);
    }
    refs.assign(all.begin(), all.begin() + b);
    // Sort so the per-frame accumulation order does not depend on the shuffle.
    std::sort(refs.begin(), refs.end(),
              [](const FrameRef& a, const FrameRef& c) { return a.track != c.track ? a.track < c.track : a.frame < c.frame; });
    std::normal_distribution<double> normal(0.0, 1.0);
    eps.resize(static_cast<std::size_t>(b) * dim);
    for (auto& e : eps) e = normal(rng);
    if (!is_variational(cfg.mode) || cfg.zero_epsilon) std::fill(eps.begin(), eps.end(), 0.0);
}

void train_step(TrainState& state, const Objective& obj, const TrainConfig& cfg, const LossWeights& w) {
    std::vector<FrameRef> refs;
    std::vector<double> eps;
    draw_minibatch(obj, cfg, state.iteration, state.latents.dim, refs, eps);
    Gradient g;
    const LossTerms t = obj.gradient(state.params, state.latents, refs, eps, w, g);
    if (!std::isfinite(t.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at iteration " << state.iteration << ": total=" << t.total << " data=" << t.data
            << " kl=" << t.kl << " l1=" << t.l1 << " smooth=" << t.smooth;
        throw NumericError(msg.str());
    }
    adam_update(state.params.values, g.theta, state.theta_opt, cfg.adam.lr, cfg.adam);
    const bool update_log_std = is_variational(cfg.mode) && !cfg.freeze_log_std;
    for (std::size_t k = 0; k < state.latents.tracks.size(); ++k) {
        LatentTrack& tr = state.latents.tracks[k];
        adam_update(tr.mu, g.mu[k], state.mu_opt[k], cfg.adam.latent_lr, cfg.adam);
        if (update_log_std) {
            adam_update(tr.log_std, g.log_std[k], state.log_std_opt[k], cfg.adam.latent_lr, cfg.adam);
            clamp_log_std(tr);
        }
    }
    state.history.push_back({state.iteration, t});
    ++state.iteration;
}

namespace {

std::vector<int> stage_iterations(const TrainConfig& cfg) {
    std::vector<double> split = cfg.stage_split;
    if (split.empty()) split.assign(cfg.stages, 1.0);
    const double sum = std::accumulate(split.begin(), split.end(), 0.0);
    std::vector<int> iters(cfg.stages);
    int used = 0;
    for (int s = 0; s < cfg.stages; ++s) {
        iters[s] = s + 1 == cfg.stages ? cfg.iterations - used
                                       : static_cast<int>(std::lround(cfg.iterations * split[s] / sum));
        used += iters[s];
    }
    return iters;
}

} // namespace

TrainState progressive_train(const std::vector<KTSlice>& slices, std::shared_ptr<const CoilMaps> maps,
                             const Architecture& arch, const TrainConfig& cfg, const CheckpointHook& on_checkpoint,
                             int model_index, TransformMode mode, GriddingParams gridding) {
    std::vector<std::string> v;
    cfg.validate(v);
    if (!v.empty()) throw ConfigError(v);
    if (slices.empty()) throw ArgumentError("no slices to train on");

    const std::vector<int> iters = stage_iterations(cfg);
    const int coarsest = 1 << (cfg.stages - 1);
    for (const auto& kt : slices)
        if (kt.frame_count() / coarsest < 2)
            throw ConfigError("train.stages: slice " + std::to_string(kt.slice) + " has " +
                              std::to_string(kt.frame_count()) + " frames, too few for a coarsest stage merging " +
                              std::to_string(coarsest) + " frames");

    // Loss weights are fixed by the finest binning so they do not jump between stages.
    const double energy = Objective(slices, maps, mode, gridding).mean_frame_energy();
    const LossWeights w = effective_weights(cfg, energy, arch.latent_dim);

    TrainState state;
    for (int s = 0; s < cfg.stages; ++s) {
        const int factor = 1 << (cfg.stages - 1 - s);
        std::vector<KTSlice> stage_slices;
        for (const auto& kt : slices) stage_slices.push_back(rebin(kt, factor));
        Objective obj(std::move(stage_slices), maps, mode, gridding);
        const auto counts = obj.frame_counts();
        if (s == 0) {
            state = init_state(arch, counts, cfg);
        } else {
            for (std::size_t k = 0; k < counts.size(); ++k) {
                state.latents.tracks[k] = refine_track(state.latents.tracks[k], counts[k]);
                state.mu_opt[k] = AdamState{};
                state.log_std_opt[k] = AdamState{};
            }
        }
        for (int i = 0; i < iters[s]; ++i) {
            train_step(state, obj, cfg, w);
            if (on_checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0)
                on_checkpoint(state, model_index);
        }
    }
    return state;
}

std::vector<TrainState> train_models(const std::vector<KTSlice>& slices, std::shared_ptr<const CoilMaps> maps,
                                     const Architecture& arch, const TrainConfig& cfg,
                                     const CheckpointHook& on_checkpoint, TransformMode mode,
                                     GriddingParams gridding) {
    std::vector<TrainState> out;
    if (is_multislice(cfg.mode)) {
        out.push_back(progressive_train(slices, maps, arch, cfg, on_checkpoint, 0, mode, gridding));
    } else {
        for (std::size_t k = 0; k < slices.size(); ++k)
            out.push_back(progressive_train({slices[k]}, maps, arch, cfg, on_checkpoint, static_cast<int>(k), mode,
                                              gridding));
    }
    return out;
}

} // namespace vstorm
