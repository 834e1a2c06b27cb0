#include "vstorm/gridding.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include <fftw3.h>

namespace vstorm {

double kaiser_bessel_beta(const GriddingParams& p) {
    const double a = p.oversampling;
    const double w = p.width;
    return std::numbers::pi * std::sqrt(w * w / (a * a) * (a - 0.5) * (a - 0.5) - 0.8);
}

double kaiser_bessel(double t, const GriddingParams& p) {
    const double r = 2.0 * t / p.width;
    if (std::abs(r) > 1.0) return 0.0;
    return std::cyl_bessel_i(0.0, kaiser_bessel_beta(p) * std::sqrt(1.0 - r * r));
}

double kaiser_bessel_ft(double xi, const GriddingParams& p) {
    const double beta = kaiser_bessel_beta(p);
    const double w = p.width;
    const double s = beta * beta - std::pow(std::numbers::pi * w * xi, 2);
    if (s > 0.0) {
        const double r = std::sqrt(s);
        return w * std::sinh(r) / r;
    }
    if (s < 0.0) {
        const double r = std::sqrt(-s);
        return w * std::sin(r) / r;
    }
    return w;
}

/// Oversampled grid size, deapodisation profile and FFTW plans shared by all
/// operators on the same image size.
class GridPlan {
public:
    GridPlan(int nx, int ny, const GriddingParams& p)
        : nx(nx), ny(ny), gx(grid_size(nx, p)), gy(grid_size(ny, p)) {
        deapod_x = profile(nx, gx, p);
        deapod_y = profile(ny, gy, p);
        fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(gx) * gy);
        // fftw plan creation is not thread-safe; callers hold plan_mutex().
        forward = fftw_plan_dft_2d(gy, gx, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        backward = fftw_plan_dft_2d(gy, gx, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
        fftw_free(buf);
    }
    ~GridPlan() {
        std::lock_guard lock(plan_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    GridPlan(const GridPlan&) = delete;
    GridPlan& operator=(const GridPlan&) = delete;

    static std::mutex& plan_mutex() {
        static std::mutex m;
        return m;
    }

    static int grid_size(int n, const GriddingParams& p) {
        return static_cast<int>(std::ceil(n * p.oversampling - 1e-9));
    }

    int nx, ny, gx, gy;
    std::vector<double> deapod_x, deapod_y;
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;

private:
    static std::vector<double> profile(int n, int g, const GriddingParams& p) {
        std::vector<double> d(n);
        for (int i = 0; i < n; ++i) d[i] = 1.0 / kaiser_bessel_ft(static_cast<double>(i - n / 2) / g, p);
        return d;
    }
};

namespace {

std::shared_ptr<const GridPlan> shared_plan(int nx, int ny, const GriddingParams& p) {
    static std::map<std::tuple<int, int, double, int>, std::weak_ptr<const GridPlan>> cache;
    std::lock_guard lock(GridPlan::plan_mutex());
    auto key = std::make_tuple(nx, ny, p.oversampling, p.width);
    if (auto hit = cache[key].lock()) return hit;
    auto plan = std::make_shared<const GridPlan>(nx, ny, p);
    cache[key] = plan;
    return plan;
}

inline int wrap_index(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

} // namespace

NufftOperator2D::NufftOperator2D(int nx, int ny, std::span<const KPoint> points, GriddingParams params)
    : nx_(nx), ny_(ny), width_(params.width) {
    if (params.width < 2 || params.oversampling <= 1.0)
        throw ArgumentError("gridding needs width >= 2 and oversampling > 1");
    plan_ = shared_plan(nx, ny, params);
    const std::size_t n = points.size();
    start_x_.resize(n);
    start_y_.resize(n);
    weights_x_.resize(n * width_);
    weights_y_.resize(n * width_);
    const double half = 0.5 * width_;
    for (std::size_t p = 0; p < n; ++p) {
        // Position on the oversampled grid, in grid samples.
        const double kx = points[p].kx * plan_->gx / nx;
        const double ky = points[p].ky * plan_->gy / ny;
        start_x_[p] = static_cast<int>(std::floor(kx - half)) + 1;
        start_y_[p] = static_cast<int>(std::floor(ky - half)) + 1;
        for (int j = 0; j < width_; ++j) {
            weights_x_[p * width_ + j] = kaiser_bessel(kx - (start_x_[p] + j), params);
            weights_y_[p * width_ + j] = kaiser_bessel(ky - (start_y_[p] + j), params);
        }
    }
}

NufftOperator2D::~NufftOperator2D() = default;
NufftOperator2D::NufftOperator2D(NufftOperator2D&&) noexcept = default;
NufftOperator2D& NufftOperator2D::operator=(NufftOperator2D&&) noexcept = default;

void NufftOperator2D::apply(std::span<const cdouble> image, std::span<cdouble> out) const {
    const GridPlan& g = *plan_;
    if (image.size() != static_cast<std::size_t>(nx_) * ny_ || out.size() != points())
        throw ShapeError("nufft apply: size mismatch");
    std::vector<cdouble> grid(static_cast<std::size_t>(g.gx) * g.gy);
    for (int y = 0; y < ny_; ++y) {
        const int gy = wrap_index(y - ny_ / 2, g.gy);
        for (int x = 0; x < nx_; ++x) {
            const int gx = wrap_index(x - nx_ / 2, g.gx);
            grid[static_cast<std::size_t>(gy) * g.gx + gx] =
                image[static_cast<std::size_t>(y) * nx_ + x] * (g.deapod_x[x] * g.deapod_y[y]);
        }
    }
    auto* buf = reinterpret_cast<fftw_complex*>(grid.data());
    fftw_execute_dft(g.forward, buf, buf);
    for (std::size_t p = 0; p < points(); ++p) {
        const double* wx = &weights_x_[p * width_];
        const double* wy = &weights_y_[p * width_];
        cdouble acc = 0.0;
        for (int j = 0; j < width_; ++j) {
            const std::size_t row = static_cast<std::size_t>(wrap_index(start_y_[p] + j, g.gy)) * g.gx;
            cdouble line = 0.0;
            for (int i = 0; i < width_; ++i) line += wx[i] * grid[row + wrap_index(start_x_[p] + i, g.gx)];
            acc += wy[j] * line;
        }
        out[p] = acc;
    }
}

void NufftOperator2D::adjoint(std::span<const cdouble> samples, std::span<cdouble> image) const {
    const GridPlan& g = *plan_;
    if (image.size() != static_cast<std::size_t>(nx_) * ny_ || samples.size() != points())
        throw ShapeError("nufft adjoint: size mismatch");
    std::vector<cdouble> grid(static_cast<std::size_t>(g.gx) * g.gy);
    for (std::size_t p = 0; p < points(); ++p) {
        const double* wx = &weights_x_[p * width_];
        const double* wy = &weights_y_[p * width_];
        for (int j = 0; j < width_; ++j) {
            const std::size_t row = static_cast<std::size_t>(wrap_index(start_y_[p] + j, g.gy)) * g.gx;
            const cdouble s = wy[j] * samples[p];
            for (int i = 0; i < width_; ++i) grid[row + wrap_index(start_x_[p] + i, g.gx)] += wx[i] * s;
        }
    }
    auto* buf = reinterpret_cast<fftw_complex*>(grid.data());
    fftw_execute_dft(g.backward, buf, buf);
    for (int y = 0; y < ny_; ++y) {
        const int gy = wrap_index(y - ny_ / 2, g.gy);
        for (int x = 0; x < nx_; ++x) {
            const int gx = wrap_index(x - nx_ / 2, g.gx);
            image[static_cast<std::size_t>(y) * nx_ + x] =
                grid[static_cast<std::size_t>(gy) * g.gx + gx] * (g.deapod_x[x] * g.deapod_y[y]);
        }
    }
}

} // namespace vstorm
