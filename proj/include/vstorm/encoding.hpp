#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vstorm/gridding.hpp"
#include "vstorm/phantom.hpp"
#include "vstorm/sampling.hpp"
#include "vstorm/volume.hpp"

namespace vstorm {

/// Complex receive sensitivities, layout (coil, z, y, x).
struct CoilMaps {
    int ncoils = 0;
    GridShape shape;
    std::vector<cdouble> data;

    /// Gaussian magnitude profiles centred on a ring around the FOV, with a
    /// slowly varying phase and a mild dependence on slice position.
    static CoilMaps gaussian(GridShape shape, int ncoils);

    std::span<const cdouble> slice(int coil, int z) const;
    double rss(int x, int y, int z) const;
};

enum class TransformMode { direct, gridded };

/// Measurement operator of one frame: slice extraction, coil weighting and a
/// 2D non-uniform Fourier transform. Output layout is (coil, point).
class EncodingOperator {
public:
    EncodingOperator(int slice, std::vector<KPoint> points, std::shared_ptr<const CoilMaps> maps,
                     TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

    int slice_index() const { return slice_; }
    TransformMode mode() const { return mode_; }
    std::size_t points() const { return points_.size(); }
    std::size_t measurement_size() const { return points_.size() * maps_->ncoils; }
    const GridShape& grid() const { return maps_->shape; }

    std::vector<cdouble> forward(const Volume3D& x) const;
    Volume3D adjoint(std::span<const cdouble> y) const;

    /// Slice-level versions used by the training loop; `image` is nx*ny.
    void forward_slice(std::span<const cdouble> image, std::span<cdouble> out) const;
    void adjoint_slice(std::span<const cdouble> y, std::span<cdouble> image) const;

private:
    void transform(std::span<const cdouble> image, std::span<cdouble> out) const;
    void transform_adjoint(std::span<const cdouble> samples, std::span<cdouble> image) const;

    int slice_;
    std::vector<KPoint> points_;
    std::shared_ptr<const CoilMaps> maps_;
    TransformMode mode_;
    std::optional<NufftOperator2D> nufft_;
};

struct KTFrame {
    int index = 0;
    double time_s = 0.0;
    std::vector<int> interleaves;
    std::vector<KPoint> points;
    std::vector<double> density_weights;
    std::vector<cdouble> data; ///< (coil, point)
};

/// k-t measurements of one slice.
struct KTSlice {
    int slice = 0;
    int ncoils = 0;
    double noise_sd = 0.0;
    std::vector<KTFrame> frames;

    int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Concatenated trajectory and weights of the interleaves in each frame.
std::vector<KTFrame> frame_layout(const FrameBinning& binning, const std::vector<Trajectory>& interleaves,
                                  double tr_s);

/// b = A x_truth + n with i.i.d. complex Gaussian noise (per-component SD
/// noise_sd). The noise stream of frame (z, t) depends only on (seed, z, t).
std::vector<KTSlice> acquire(const GroundTruth& truth, std::shared_ptr<const CoilMaps> maps,
                             const FrameBinning& binning, const std::vector<Trajectory>& interleaves,
                             double tr_s, double noise_sd, std::uint64_t seed,
                             TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

/// Frames merged in groups of `factor`, measurements concatenated per coil.
KTSlice rebin(const KTSlice& fine, int factor);

EncodingOperator make_operator(const KTSlice& kt, int frame, std::shared_ptr<const CoilMaps> maps,
                               TransformMode mode = TransformMode::gridded, GriddingParams gridding = {});

} // namespace vstorm
