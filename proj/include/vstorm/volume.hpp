#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "vstorm/error.hpp"

namespace vstorm {

using cdouble = std::complex<double>;

struct GridShape {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t slice_size() const { return static_cast<std::size_t>(nx) * ny; }
    std::size_t voxels() const { return slice_size() * nz; }
    bool operator==(const GridShape&) const = default;
};

/// Complex volume, x fastest then y then z, so each slice is contiguous.
class Volume3D {
public:
    Volume3D() = default;
    explicit Volume3D(GridShape shape) : shape_(shape), data_(shape.voxels()) {}

    const GridShape& shape() const { return shape_; }
    std::span<cdouble> data() { return data_; }
    std::span<const cdouble> data() const { return data_; }

    cdouble& at(int x, int y, int z) { return data_[index(x, y, z)]; }
    const cdouble& at(int x, int y, int z) const { return data_[index(x, y, z)]; }

    std::span<cdouble> slice(int z) {
        check_slice(z);
        return {data_.data() + z * shape_.slice_size(), shape_.slice_size()};
    }
    std::span<const cdouble> slice(int z) const {
        check_slice(z);
        return {data_.data() + z * shape_.slice_size(), shape_.slice_size()};
    }

    bool operator==(const Volume3D&) const = default;

private:
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * shape_.ny + y) * shape_.nx + x;
    }
    void check_slice(int z) const {
        if (z < 0 || z >= shape_.nz)
            throw IndexError("slice " + std::to_string(z) + " outside volume with " +
                             std::to_string(shape_.nz) + " slices");
    }

    GridShape shape_;
    std::vector<cdouble> data_;
};

using ImageSeries = std::vector<Volume3D>;

} // namespace vstorm
