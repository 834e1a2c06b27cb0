#pragma once

#include <memory>
#include <span>
#include <vector>

#include "vstorm/sampling.hpp"
#include "vstorm/volume.hpp"

namespace vstorm {

struct GriddingParams {
    double oversampling = 1.25;
    int width = 6;
    bool operator==(const GriddingParams&) const = default;
};

double kaiser_bessel_beta(const GriddingParams& p);

/// Kaiser-Bessel window on [-width/2, width/2], unnormalised.
double kaiser_bessel(double t, const GriddingParams& p);

/// Continuous Fourier transform of kaiser_bessel at frequency xi (cycles per
/// oversampled grid sample).
double kaiser_bessel_ft(double xi, const GriddingParams& p);

class GridPlan;

/// 2D non-uniform FFT of an nx-by-ny image (pixel coordinates centred on
/// nx/2, ny/2) evaluated at arbitrary k-space points, and its exact adjoint.
/// Immutable after construction; apply/adjoint are reentrant.
class NufftOperator2D {
public:
    NufftOperator2D(int nx, int ny, std::span<const KPoint> points, GriddingParams params = {});
    ~NufftOperator2D();
    NufftOperator2D(NufftOperator2D&&) noexcept;
    NufftOperator2D& operator=(NufftOperator2D&&) noexcept;

    std::size_t points() const { return start_x_.size(); }

    /// out[p] ~= sum_r image[r] exp(-2 pi i k_p . r / N)
    void apply(std::span<const cdouble> image, std::span<cdouble> out) const;
    /// image = exact conjugate transpose of apply
    void adjoint(std::span<const cdouble> samples, std::span<cdouble> image) const;

private:
    int nx_ = 0;
    int ny_ = 0;
    int width_ = 0;
    std::shared_ptr<const GridPlan> plan_;
    std::vector<int> start_x_;
    std::vector<int> start_y_;
    std::vector<double> weights_x_; // points * width
    std::vector<double> weights_y_;
};

} // namespace vstorm
