#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vstorm/volume.hpp"

namespace vstorm {

/// Decoder layout: dense latent -> (base_channels, nx/2^S, ny/2^S), then S
/// stages of {2x nearest upsample, 3x3 conv, leaky ReLU}, then a head that
/// emits 2*nz channels read as (real/imag, z). The head is a 1x1 conv, or
/// with conv3d_head a 1x1 lift to head_channels*nz maps followed by a
/// 3x3x3 conv over (z, y, x).
struct Architecture {
    int latent_dim = 2;
    int nx = 64;
    int ny = 64;
    int nz = 4;
    int base_channels = 32;
    std::vector<int> stage_channels{32, 32, 16, 16};
    double leak = 0.1;
    bool conv3d_head = false;
    int head_channels = 4;

    int stages() const { return static_cast<int>(stage_channels.size()); }
    void validate(std::vector<std::string>& violations, const std::string& prefix = "generator") const;
    bool operator==(const Architecture&) const = default;
};

struct TensorInfo {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Flat parameter vector plus the tensor table that slices it.
struct GeneratorParams {
    Architecture arch;
    std::vector<double> values;
    std::vector<TensorInfo> tensors;

    std::size_t count() const { return values.size(); }
};

std::size_t parameter_count(const Architecture& arch);

/// Zero-valued parameters with the tensor table filled in.
GeneratorParams empty_params(const Architecture& arch);

/// He-style fan-in scaled normal weights, zero biases.
GeneratorParams init_params(const Architecture& arch, std::uint64_t seed);

/// Reusable forward/backward workspace. Not thread-safe; one per thread.
class Decoder {
public:
    explicit Decoder(const Architecture& arch);
    ~Decoder();
    Decoder(Decoder&&) noexcept;
    Decoder& operator=(Decoder&&) noexcept;

    void forward(const GeneratorParams& params, std::span<const double> latent);

    /// Raw output, (2*nz, ny, nx).
    std::span<const double> output() const;
    Volume3D volume() const;
    void slice(int z, std::span<cdouble> image) const;

    /// Reverse pass for the last forward(). `output_grad` has the layout of
    /// output(). Accumulates into grad_theta, overwrites grad_latent.
    void backward(const GeneratorParams& params, std::span<const double> output_grad,
                  std::span<double> grad_theta, std::span<double> grad_latent);

    struct Layer;

private:
    Architecture arch_;
    std::vector<Layer> layers_;
    std::vector<std::vector<double>> acts_;  // acts_[0] = latent, acts_[i+1] = output of layer i
    std::vector<std::vector<double>> cols_;  // im2col buffers per layer
    std::vector<std::vector<double>> grads_; // scratch for the reverse pass
};

Volume3D decode(const GeneratorParams& params, std::span<const double> latent);

struct DecodeGradient {
    std::vector<double> theta;
    std::vector<double> latent;
};

/// Reverse-mode gradient of <cotangent, decode(params, latent)>, the real
/// inner product over real and imaginary parts.
DecodeGradient decode_grad(const GeneratorParams& params, std::span<const double> latent,
                           const Volume3D& cotangent);

} // namespace vstorm
