#include "vstorm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Dense>

namespace vstorm {

SerResult ser_db(const ImageSeries& recon, const ImageSeries& truth) {
    if (recon.size() != truth.size()) throw ShapeError("ser: series lengths differ");
    double signal = 0.0, error = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        if (!(recon[t].shape() == truth[t].shape())) throw ShapeError("ser: frame shapes differ");
        auto r = recon[t].data();
        auto g = truth[t].data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double a = std::abs(g[i]);
            const double d = std::abs(r[i]) - a;
            signal += a * a;
            error += d * d;
        }
    }
    if (signal == 0.0) throw ArgumentError("ser: ground truth has zero norm");
    if (error == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(signal / error), false};
}

ImageSeries slice_series(const ImageSeries& series, int z) {
    ImageSeries out;
    out.reserve(series.size());
    for (const auto& v : series) {
        Volume3D s({v.shape().nx, v.shape().ny, 1});
        auto src = v.slice(z);
        std::copy(src.begin(), src.end(), s.slice(0).begin());
        out.push_back(std::move(s));
    }
    return out;
}

ImageSeries reconstruct_track(const GeneratorParams& params, const LatentTrack& track) {
    if (track.dim != params.arch.latent_dim) throw ShapeError("latent track dimension does not match the generator");
    Decoder dec(params.arch);
    ImageSeries out;
    out.reserve(track.frames);
    for (int t = 0; t < track.frames; ++t) {
        dec.forward(params, track.mu_row(t));
        out.push_back(dec.volume());
    }
    return out;
}

ImageSeries cross_excite(const GeneratorParams& params, const LatentSchedule& latents, int source) {
    if (source < 0 || source >= static_cast<int>(latents.tracks.size()))
        throw IndexError("source slice " + std::to_string(source) + " has no latent track");
    return reconstruct_track(params, latents.tracks[source]);
}

std::vector<double> latent_points(const LatentTrack& track, bool sample, int draws, std::uint64_t seed) {
    if (sample && draws < 1) throw ArgumentError("need at least one draw per frame");
    std::vector<double> out;
    if (!sample) return track.mu;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    out.reserve(static_cast<std::size_t>(track.frames) * draws * track.dim);
    for (int t = 0; t < track.frames; ++t) {
        auto mu = track.mu_row(t);
        auto ls = track.log_std_row(t);
        for (int k = 0; k < draws; ++k)
            for (int j = 0; j < track.dim; ++j) out.push_back(mu[j] + std::exp(ls[j]) * normal(rng));
    }
    return out;
}

namespace {

struct Fit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Fit fit_gaussian(std::span<const double> pts, int dim, double reg) {
    const Eigen::Index n = static_cast<Eigen::Index>(pts.size()) / dim;
    if (n < 2) throw ArgumentError("need at least two latent points per slice");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(pts.data(), n, dim);
    Fit f;
    f.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - f.mean.transpose();
    f.cov = c.transpose() * c / static_cast<double>(n - 1);
    f.cov += reg * Eigen::MatrixXd::Identity(dim, dim);
    return f;
}

// KL(p || q) without the log-determinant terms, which cancel in the symmetric sum.
double kl_no_logdet(const Fit& p, const Eigen::LLT<Eigen::MatrixXd>& q_chol, const Fit& q) {
    const Eigen::VectorXd d = q.mean - p.mean;
    return 0.5 * ((q_chol.solve(p.cov)).trace() + d.dot(q_chol.solve(d)) - static_cast<double>(p.mean.size()));
}

} // namespace

double gaussian_symmetric_kl(std::span<const double> a, std::span<const double> b, int dim, double reg) {
    if (dim < 1 || a.size() % dim != 0 || b.size() % dim != 0) throw ShapeError("latent points do not match dim");
    const Fit fa = fit_gaussian(a, dim, reg);
    const Fit fb = fit_gaussian(b, dim, reg);
    Eigen::LLT<Eigen::MatrixXd> ca(fa.cov), cb(fb.cov);
    if (ca.info() != Eigen::Success || cb.info() != Eigen::Success)
        throw NumericError("latent covariance is not positive definite");
    const double v = 0.5 * (kl_no_logdet(fa, cb, fb) + kl_no_logdet(fb, ca, fa));
    if (!std::isfinite(v)) throw NumericError("latent divergence is not finite");
    return std::max(0.0, v);
}

double latent_divergence(const LatentTrack& a, const LatentTrack& b, bool sample, int draws, std::uint64_t seed) {
    if (a.dim != b.dim) throw ShapeError("latent tracks differ in dimension");
    if (a.frames < 2 || b.frames < 2) throw ArgumentError("latent divergence needs at least two frames per track");
    return gaussian_symmetric_kl(latent_points(a, sample, draws, seed), latent_points(b, sample, draws, seed), a.dim);
}

double circular_distance(double a, double b) {
    const double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
    return std::min(d, 2.0 * std::numbers::pi - d);
}

double cardiac_phase_error(double estimate, double truth) {
    return std::min(circular_distance(estimate, truth), circular_distance(estimate, -truth));
}

double resp_phase_error(double estimate, double truth) {
    return std::min(circular_distance(estimate, truth), circular_distance(estimate, std::numbers::pi - truth));
}

namespace {

// Zero-mean, unit-norm magnitude of one slice; all zeros when the slice is flat.
std::vector<double> normalized_magnitude(std::span<const cdouble> s) {
    std::vector<double> m(s.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) mean += (m[i] = std::abs(s[i]));
    mean /= static_cast<double>(s.size());
    double norm = 0.0;
    for (auto& v : m) {
        v -= mean;
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (auto& v : m) v /= norm;
    else
        std::fill(m.begin(), m.end(), 0.0);
    return m;
}

} // namespace

PhaseDictionary::PhaseDictionary(const PhantomConfig& cfg, int bins) : bins_(bins), shape_(cfg.grid()) {
    if (bins < 1) throw ArgumentError("phase dictionary needs at least one bin");
    const std::size_t n = shape_.slice_size();
    for (int c = 0; c < bins; ++c)
        for (int r = 0; r < bins; ++r) {
            const MotionState s{c * bin_width(), r * bin_width()};
            const Volume3D v = render_volume(cfg, s);
            std::vector<double> flat;
            flat.reserve(n * shape_.nz);
            for (int z = 0; z < shape_.nz; ++z) {
                auto m = normalized_magnitude(v.slice(z));
                flat.insert(flat.end(), m.begin(), m.end());
            }
            states_.push_back(s);
            normalized_.push_back(std::move(flat));
        }
}

double PhaseDictionary::bin_width() const { return 2.0 * std::numbers::pi / bins_; }

int PhaseDictionary::match(const Volume3D& volume, int z) const {
    if (!(volume.shape() == shape_)) throw ShapeError("volume does not match the phase dictionary grid");
    const auto m = normalized_magnitude(volume.slice(z));
    const std::size_t n = shape_.slice_size();
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int e = 0; e < size(); ++e) {
        const double* d = normalized_[e].data() + static_cast<std::size_t>(z) * n;
        double score = 0.0;
        for (std::size_t i = 0; i < n; ++i) score += d[i] * m[i];
        if (score > best_score) {
            best_score = score;
            best = e;
        }
    }
    return best;
}

namespace {

double percentile95(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
    return v[std::max<std::size_t>(rank, 1) - 1];
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

} // namespace

std::vector<PhaseStats> phase_alignment_error(const ImageSeries& recon, const std::vector<MotionState>& truth,
                                              const PhaseDictionary& dict) {
    if (recon.empty()) throw ArgumentError("phase alignment needs at least one frame");
    if (truth.size() != recon.size())
        throw ConsistencyError("phase alignment: " + std::to_string(recon.size()) + " frames but " +
                               std::to_string(truth.size()) + " ground-truth states");
    const double half = 0.5 * dict.bin_width();
    const int nz = recon.front().shape().nz;
    std::vector<PhaseStats> out(nz);
    for (int z = 0; z < nz; ++z) {
        std::vector<double> ec, er;
        for (std::size_t t = 0; t < recon.size(); ++t) {
            const MotionState& est = dict.state(dict.match(recon[t], z));
            ec.push_back(std::max(0.0, cardiac_phase_error(est.cardiac, truth[t].cardiac) - half));
            er.push_back(std::max(0.0, resp_phase_error(est.resp, truth[t].resp) - half));
        }
        out[z] = {mean(ec), percentile95(ec), mean(er), percentile95(er)};
    }
    return out;
}

void EvaluationConfig::validate(std::vector<std::string>& v, const std::string& p) const {
    if (source_slice < 0) v.push_back(p + ".source_slice: must be >= 0");
    if (dictionary_bins < 2) v.push_back(p + ".dictionary_bins: must be >= 2");
    if (divergence_draws < 1) v.push_back(p + ".divergence_draws: must be >= 1");
}

double ReconReport::max_divergence() const {
    double m = 0.0;
    for (const auto& row : divergence)
        for (double d : row) m = std::max(m, d);
    return m;
}

double ReconReport::cross_drop() const {
    double s = 0.0;
    int n = 0;
    for (std::size_t z = 0; z < ser.size(); ++z) {
        if (static_cast<int>(z) == source_slice) continue;
        s += ser[z].db - cross_ser[source_slice][z].db;
        ++n;
    }
    return n > 0 ? s / n : 0.0;
}

std::string ReconReport::to_text() const {
    std::ostringstream o;
    o << std::fixed << std::setprecision(3);
    const auto db = [](const SerResult& r) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(3);
        if (r.saturated)
            s << "sat";
        else
            s << r.db;
        return s.str();
    };
    o << "mode " << mode << "\n";
    o << "source_slice " << source_slice << "\n\n";
    o << "slice  ser_db  cardiac_mean  cardiac_p95  resp_mean  resp_p95\n";
    for (std::size_t z = 0; z < ser.size(); ++z) {
        o << std::setw(5) << z << "  " << std::setw(6) << db(ser[z]);
        if (z < phase.size())
            o << "  " << std::setw(12) << phase[z].cardiac_mean << "  " << std::setw(11) << phase[z].cardiac_p95
              << "  " << std::setw(9) << phase[z].resp_mean << "  " << std::setw(8) << phase[z].resp_p95;
        o << "\n";
    }
    o << "\nlatent divergence (slice x slice)\n";
    for (const auto& row : divergence) {
        for (double d : row) o << std::setw(10) << d;
        o << "\n";
    }
    o << "max " << max_divergence() << "\n";
    o << "\ncross-excitation ser_db (source x target)\n";
    for (const auto& row : cross_ser) {
        for (const auto& r : row) o << std::setw(10) << db(r);
        o << "\n";
    }
    o << "drop " << cross_drop() << "\n";
    return o.str();
}

int ModelSet::slices() const {
    if (states.empty()) return 0;
    return is_multislice(mode) ? static_cast<int>(states.front().latents.tracks.size())
                               : static_cast<int>(states.size());
}

const GeneratorParams& ModelSet::decoder_for(int slice) const {
    if (slice < 0 || slice >= slices()) throw IndexError("no model for slice " + std::to_string(slice));
    return is_multislice(mode) ? states.front().params : states[slice].params;
}

const LatentTrack& ModelSet::track_for(int slice) const {
    if (slice < 0 || slice >= slices()) throw IndexError("no latent track for slice " + std::to_string(slice));
    return is_multislice(mode) ? states.front().latents.tracks[slice] : states[slice].latents.tracks.front();
}

ImageSeries decode_series(const ModelSet& models, int target, const LatentTrack& track) {
    return reconstruct_track(models.decoder_for(target), track);
}

namespace {

// Frame t of the result holds slice z decoded by the model of slice z from
// the latent track of `source`.
ImageSeries excite_all(const ModelSet& models, int source) {
    const LatentTrack& track = models.track_for(source);
    if (is_multislice(models.mode)) return decode_series(models, 0, track);
    ImageSeries out;
    for (int z = 0; z < models.slices(); ++z) {
        ImageSeries part = decode_series(models, z, track);
        if (out.empty()) out.assign(part.size(), Volume3D(part.front().shape()));
        for (std::size_t t = 0; t < part.size(); ++t) {
            auto src = part[t].slice(z);
            std::copy(src.begin(), src.end(), out[t].slice(z).begin());
        }
    }
    return out;
}

ImageSeries truth_series(const GroundTruth& truth, int z, int frames) {
    if (z >= truth.slices() || static_cast<int>(truth.records[z].size()) != frames)
        throw ConsistencyError("ground truth of slice " + std::to_string(z) + " does not match " +
                               std::to_string(frames) + " reconstructed frames");
    ImageSeries s;
    for (const auto& r : truth.records[z]) s.push_back(r.volume);
    return s;
}

} // namespace

ReconReport evaluate(const ModelSet& models, const GroundTruth& truth, const PhantomConfig& phantom,
                     const EvaluationConfig& cfg) {
    const int nz = models.slices();
    if (nz != truth.slices())
        throw ConsistencyError("models cover " + std::to_string(nz) + " slices, ground truth " +
                               std::to_string(truth.slices()));
    if (cfg.source_slice >= nz) throw IndexError("evaluation.source_slice outside the slice range");

    ReconReport rep;
    rep.mode = to_string(models.mode);
    rep.source_slice = cfg.source_slice;
    rep.ser.resize(nz);
    rep.cross_ser.assign(nz, std::vector<SerResult>(nz));
    rep.divergence.assign(nz, std::vector<double>(nz, 0.0));

    ImageSeries source_series;
    for (int s = 0; s < nz; ++s) {
        ImageSeries excited = excite_all(models, s);
        const ImageSeries ref = truth_series(truth, s, static_cast<int>(excited.size()));
        for (int z = 0; z < nz; ++z) rep.cross_ser[s][z] = ser_db(slice_series(excited, z), slice_series(ref, z));
        rep.ser[s] = rep.cross_ser[s][s];
        if (s == cfg.source_slice) source_series = std::move(excited);
    }

    const bool sample = is_variational(models.mode);
    for (int a = 0; a < nz; ++a)
        for (int b = a + 1; b < nz; ++b)
            rep.divergence[a][b] = rep.divergence[b][a] = latent_divergence(
                models.track_for(a), models.track_for(b), sample, cfg.divergence_draws, cfg.divergence_seed);

    std::vector<MotionState> states;
    for (const auto& r : truth.records[cfg.source_slice]) states.push_back(r.state);
    const PhaseDictionary dict(phantom, cfg.dictionary_bins);
    rep.phase = phase_alignment_error(source_series, states, dict);
    return rep;
}

} // namespace vstorm
