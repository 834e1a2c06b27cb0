#include "vstorm/encoding.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace vstorm {

CoilMaps CoilMaps::gaussian(GridShape shape, int ncoils) {
    if (ncoils < 1) throw ArgumentError("need at least one coil");
    CoilMaps m;
    m.ncoils = ncoils;
    m.shape = shape;
    m.data.resize(static_cast<std::size_t>(ncoils) * shape.voxels());
    const double hx = 0.5 * shape.nx;
    const double hy = 0.5 * shape.ny;
    const double ring = 1.1;
    const double width = 0.9;
    for (int c = 0; c < ncoils; ++c) {
        const double a = 2.0 * std::numbers::pi * c / ncoils + 0.3;
        const double cu = ring * std::cos(a);
        const double cv = ring * std::sin(a);
        for (int z = 0; z < shape.nz; ++z) {
            const double w = (2.0 * z + 1.0) / shape.nz - 1.0;
            for (int y = 0; y < shape.ny; ++y) {
                for (int x = 0; x < shape.nx; ++x) {
                    const double u = (x - hx) / hx;
                    const double v = (y - hy) / hy;
                    const double d2 = (u - cu) * (u - cu) + (v - cv) * (v - cv) + 0.15 * w * w;
                    const double mag = std::exp(-d2 / (2.0 * width * width));
                    const double phase = 0.6 * (u * std::cos(a) + v * std::sin(a)) + 0.2 * w + 0.5 * c;
                    m.data[((static_cast<std::size_t>(c) * shape.nz + z) * shape.ny + y) * shape.nx + x] =
                        std::polar(mag, phase);
                }
            }
        }
    }
    return m;
}

std::span<const cdouble> CoilMaps::slice(int coil, int z) const {
    if (coil < 0 || coil >= ncoils || z < 0 || z >= shape.nz) throw IndexError("coil map index out of range");
    return {data.data() + (static_cast<std::size_t>(coil) * shape.nz + z) * shape.slice_size(), shape.slice_size()};
}

double CoilMaps::rss(int x, int y, int z) const {
    double s = 0.0;
    for (int c = 0; c < ncoils; ++c) s += std::norm(slice(c, z)[static_cast<std::size_t>(y) * shape.nx + x]);
    return std::sqrt(s);
}

EncodingOperator::EncodingOperator(int slice, std::vector<KPoint> points, std::shared_ptr<const CoilMaps> maps,
                                   TransformMode mode, GriddingParams gridding)
    : slice_(slice), points_(std::move(points)), maps_(std::move(maps)), mode_(mode) {
    if (!maps_) throw ArgumentError("encoding operator needs coil maps");
    if (slice_ < 0 || slice_ >= maps_->shape.nz) throw IndexError("encoding slice out of range");
    if (mode_ == TransformMode::gridded) nufft_.emplace(maps_->shape.nx, maps_->shape.ny, points_, gridding);
}

void EncodingOperator::transform(std::span<const cdouble> image, std::span<cdouble> out) const {
    if (nufft_) {
        nufft_->apply(image, out);
        return;
    }
    const int nx = maps_->shape.nx;
    const int ny = maps_->shape.ny;
    std::vector<cdouble> ex(nx), ey(ny);
    for (std::size_t p = 0; p < points_.size(); ++p) {
        const double wx = -2.0 * std::numbers::pi * points_[p].kx / nx;
        const double wy = -2.0 * std::numbers::pi * points_[p].ky / ny;
        for (int x = 0; x < nx; ++x) ex[x] = std::polar(1.0, wx * (x - nx / 2));
        for (int y = 0; y < ny; ++y) ey[y] = std::polar(1.0, wy * (y - ny / 2));
        cdouble acc = 0.0;
        for (int y = 0; y < ny; ++y) {
            const cdouble* row = image.data() + static_cast<std::size_t>(y) * nx;
            cdouble line = 0.0;
            for (int x = 0; x < nx; ++x) line += row[x] * ex[x];
            acc += line * ey[y];
        }
        out[p] = acc;
    }
}

void EncodingOperator::transform_adjoint(std::span<const cdouble> samples, std::span<cdouble> image) const {
    if (nufft_) {
        nufft_->adjoint(samples, image);
        return;
    }
    const int nx = maps_->shape.nx;
    const int ny = maps_->shape.ny;
    std::fill(image.begin(), image.end(), cdouble{});
    std::vector<cdouble> ex(nx), ey(ny);
    for (std::size_t p = 0; p < points_.size(); ++p) {
        const double wx = 2.0 * std::numbers::pi * points_[p].kx / nx;
        const double wy = 2.0 * std::numbers::pi * points_[p].ky / ny;
        for (int x = 0; x < nx; ++x) ex[x] = std::polar(1.0, wx * (x - nx / 2));
        for (int y = 0; y < ny; ++y) ey[y] = std::polar(1.0, wy * (y - ny / 2)) * samples[p];
        for (int y = 0; y < ny; ++y) {
            cdouble* row = image.data() + static_cast<std::size_t>(y) * nx;
            for (int x = 0; x < nx; ++x) row[x] += ey[y] * ex[x];
        }
    }
}

void EncodingOperator::forward_slice(std::span<const cdouble> image, std::span<cdouble> out) const {
    const std::size_t n = maps_->shape.slice_size();
    if (image.size() != n) throw ShapeError("forward: slice image has wrong size");
    if (out.size() != measurement_size()) throw ShapeError("forward: output has wrong size");
    std::vector<cdouble> weighted(n);
    for (int c = 0; c < maps_->ncoils; ++c) {
        auto s = maps_->slice(c, slice_);
        for (std::size_t i = 0; i < n; ++i) weighted[i] = s[i] * image[i];
        transform(weighted, out.subspan(c * points_.size(), points_.size()));
    }
}

void EncodingOperator::adjoint_slice(std::span<const cdouble> y, std::span<cdouble> image) const {
    const std::size_t n = maps_->shape.slice_size();
    if (y.size() != measurement_size()) throw ShapeError("adjoint: measurement vector has wrong length");
    if (image.size() != n) throw ShapeError("adjoint: slice image has wrong size");
    std::fill(image.begin(), image.end(), cdouble{});
    std::vector<cdouble> tmp(n);
    for (int c = 0; c < maps_->ncoils; ++c) {
        transform_adjoint(y.subspan(c * points_.size(), points_.size()), tmp);
        auto s = maps_->slice(c, slice_);
        for (std::size_t i = 0; i < n; ++i) image[i] += std::conj(s[i]) * tmp[i];
    }
}

std::vector<cdouble> EncodingOperator::forward(const Volume3D& x) const {
    if (!(x.shape() == maps_->shape)) throw ShapeError("forward: volume does not match operator geometry");
    std::vector<cdouble> out(measurement_size());
    forward_slice(x.slice(slice_), out);
    return out;
}

Volume3D EncodingOperator::adjoint(std::span<const cdouble> y) const {
    Volume3D v(maps_->shape);
    adjoint_slice(y, v.slice(slice_));
    return v;
}

std::vector<KTFrame> frame_layout(const FrameBinning& binning, const std::vector<Trajectory>& interleaves,
                                  double tr_s) {
    std::vector<KTFrame> frames;
    for (int t = 0; t < binning.frame_count(); ++t) {
        KTFrame f;
        f.index = t;
        f.interleaves = binning.frames[t];
        double time = 0.0;
        for (int k : f.interleaves) {
            if (k < 0 || k >= static_cast<int>(interleaves.size()))
                throw ConsistencyError("binning references interleave " + std::to_string(k) +
                                       " beyond the acquired trajectories");
            const Trajectory& tr = interleaves[k];
            f.points.insert(f.points.end(), tr.points.begin(), tr.points.end());
            f.density_weights.insert(f.density_weights.end(), tr.density_weights.begin(), tr.density_weights.end());
            time += k * tr_s;
        }
        f.time_s = time / static_cast<double>(f.interleaves.size());
        frames.push_back(std::move(f));
    }
    return frames;
}

std::vector<KTSlice> acquire(const GroundTruth& truth, std::shared_ptr<const CoilMaps> maps,
                             const FrameBinning& binning, const std::vector<Trajectory>& interleaves,
                             double tr_s, double noise_sd, std::uint64_t seed, TransformMode mode,
                             GriddingParams gridding) {
    if (noise_sd < 0.0) throw ArgumentError("noise_sd must be >= 0");
    if (!maps) throw ArgumentError("acquire needs coil maps");
    const auto layout = frame_layout(binning, interleaves, tr_s);
    std::vector<KTSlice> out;
    for (int z = 0; z < maps->shape.nz; ++z) {
        KTSlice kt;
        kt.slice = z;
        kt.ncoils = maps->ncoils;
        kt.noise_sd = noise_sd;
        for (int t = 0; t < static_cast<int>(layout.size()); ++t) {
            if (z >= truth.slices() || t >= static_cast<int>(truth.records[z].size()))
                throw ConsistencyError("missing ground truth for slice " + std::to_string(z) + ", frame " +
                                       std::to_string(t));
            const GroundTruthRecord& rec = truth.records[z][t];
            if (!(rec.volume.shape() == maps->shape))
                throw ConsistencyError("ground truth volume does not match coil map geometry");
            KTFrame f = layout[t];
            EncodingOperator op(z, f.points, maps, mode, gridding);
            f.data = op.forward(rec.volume);
            if (noise_sd > 0.0) {
                std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                  static_cast<std::uint32_t>(z), static_cast<std::uint32_t>(t), 0x6e6f6973u};
                std::mt19937_64 rng(seq);
                std::normal_distribution<double> normal(0.0, noise_sd);
                for (auto& b : f.data) {
                    const double re = normal(rng);
                    const double im = normal(rng);
                    b += cdouble(re, im);
                }
            }
            kt.frames.push_back(std::move(f));
        }
        out.push_back(std::move(kt));
    }
    return out;
}

KTSlice rebin(const KTSlice& fine, int factor) {
    if (factor < 1) throw ArgumentError("rebin factor must be >= 1");
    if (factor == 1) return fine;
    KTSlice out;
    out.slice = fine.slice;
    out.ncoils = fine.ncoils;
    out.noise_sd = fine.noise_sd;
    for (int f = 0; f + factor <= fine.frame_count(); f += factor) {
        KTFrame merged;
        merged.index = f / factor;
        double time = 0.0;
        std::size_t total_points = 0;
        for (int j = 0; j < factor; ++j) total_points += fine.frames[f + j].points.size();
        merged.data.resize(total_points * fine.ncoils);
        std::size_t offset = 0;
        for (int j = 0; j < factor; ++j) {
            const KTFrame& src = fine.frames[f + j];
            merged.interleaves.insert(merged.interleaves.end(), src.interleaves.begin(), src.interleaves.end());
            merged.points.insert(merged.points.end(), src.points.begin(), src.points.end());
            merged.density_weights.insert(merged.density_weights.end(), src.density_weights.begin(),
                                          src.density_weights.end());
            const std::size_t np = src.points.size();
            for (int c = 0; c < fine.ncoils; ++c)
                std::copy_n(src.data.begin() + c * np, np, merged.data.begin() + c * total_points + offset);
            offset += np;
            time += src.time_s;
        }
        merged.time_s = time / factor;
        out.frames.push_back(std::move(merged));
    }
    return out;
}

EncodingOperator make_operator(const KTSlice& kt, int frame, std::shared_ptr<const CoilMaps> maps,
                               TransformMode mode, GriddingParams gridding) {
    if (frame < 0 || frame >= kt.frame_count())
        throw ConsistencyError("slice " + std::to_string(kt.slice) + " has no frame " + std::to_string(frame));
    const KTFrame& f = kt.frames[frame];
    if (f.data.size() != f.points.size() * kt.ncoils)
        throw ConsistencyError("frame measurement length does not match its trajectory");
    return EncodingOperator(kt.slice, f.points, std::move(maps), mode, gridding);
}

} // namespace vstorm
