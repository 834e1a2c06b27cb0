#include "vstorm/generator.hpp"

#include <cmath>
#include <random>

#include <Eigen/Core>

namespace vstorm {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

enum class Kind { dense, leaky_relu, upsample2x, conv2d, conv3d };

struct FeatureShape {
    int c = 1, d = 1, h = 1, w = 1;
    std::size_t size() const { return static_cast<std::size_t>(c) * d * h * w; }
    std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
};

} // namespace

struct Decoder::Layer {
    Kind kind;
    FeatureShape in, out;
    int kernel = 1;
    double gain = 1.0; // init scale multiplier on 1/sqrt(fan_in)
    std::size_t weight_offset = 0, weight_size = 0;
    std::size_t bias_offset = 0, bias_size = 0;
};

namespace {

std::vector<Decoder::Layer> build_layers(const Architecture& a) {
    using L = Decoder::Layer;
    std::vector<L> layers;
    const int s = a.stages();
    FeatureShape cur{a.latent_dim, 1, 1, 1};
    std::size_t offset = 0;
    auto add_param_layer = [&](Kind kind, FeatureShape out, int kernel, double gain) {
        L l{kind, cur, out, kernel, gain};
        const std::size_t taps = kind == Kind::dense    ? 1
                                 : kind == Kind::conv3d ? static_cast<std::size_t>(kernel) * kernel * kernel
                                                        : static_cast<std::size_t>(kernel) * kernel;
        l.weight_offset = offset;
        l.weight_size = kind == Kind::dense ? out.size() * cur.size() : out.c * cur.c * taps;
        offset += l.weight_size;
        l.bias_offset = offset;
        l.bias_size = kind == Kind::dense ? out.size() : out.c;
        offset += l.bias_size;
        layers.push_back(l);
        cur = out;
    };
    auto add_relu = [&] { layers.push_back(L{Kind::leaky_relu, cur, cur}); };

    const double he = std::sqrt(2.0);
    add_param_layer(Kind::dense, {a.base_channels, 1, a.ny >> s, a.nx >> s}, 1, he);
    add_relu();
    for (int i = 0; i < s; ++i) {
        layers.push_back(L{Kind::upsample2x, cur, {cur.c, 1, cur.h * 2, cur.w * 2}});
        cur = layers.back().out;
        add_param_layer(Kind::conv2d, {a.stage_channels[i], 1, cur.h, cur.w}, 3, he);
        add_relu();
    }
    if (a.conv3d_head) {
        add_param_layer(Kind::conv2d, {a.head_channels * a.nz, 1, cur.h, cur.w}, 1, he);
        add_relu();
        cur = {a.head_channels, a.nz, cur.h, cur.w};
        layers.back().out = cur;
        add_param_layer(Kind::conv3d, {2, a.nz, cur.h, cur.w}, 3, 1.0);
    } else {
        add_param_layer(Kind::conv2d, {2 * a.nz, 1, cur.h, cur.w}, 1, 1.0);
    }
    return layers;
}

std::size_t col_rows(const Decoder::Layer& l) {
    const std::size_t k = l.kernel;
    return l.kind == Kind::conv3d ? l.in.c * k * k * k : l.in.c * k * k;
}

// col[((ci*k + dz)*k + dy)*k + dx][(z*H + y)*W + x] = in[ci][z+dz-p][y+dy-p][x+dx-p]
void im2col(const Decoder::Layer& l, const double* in, double* col) {
    const int k = l.kernel;
    const int p = k / 2;
    const int kd = l.kind == Kind::conv3d ? k : 1;
    const int pd = l.kind == Kind::conv3d ? p : 0;
    const int D = l.in.d, H = l.in.h, W = l.in.w;
    const std::size_t plane = static_cast<std::size_t>(D) * H * W;
    for (int ci = 0; ci < l.in.c; ++ci) {
        const double* src = in + ci * plane;
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    double* dst = col + ((static_cast<std::size_t>(ci) * kd + dz) * k * k + dy * k + dx) * plane;
                    for (int z = 0; z < D; ++z) {
                        const int sz = z + dz - pd;
                        for (int y = 0; y < H; ++y) {
                            double* row = dst + (static_cast<std::size_t>(z) * H + y) * W;
                            const int sy = y + dy - p;
                            if (sz < 0 || sz >= D || sy < 0 || sy >= H) {
                                std::fill(row, row + W, 0.0);
                                continue;
                            }
                            const double* srow = src + (static_cast<std::size_t>(sz) * H + sy) * W;
                            for (int x = 0; x < W; ++x) {
                                const int sx = x + dx - p;
                                row[x] = (sx >= 0 && sx < W) ? srow[sx] : 0.0;
                            }
                        }
                    }
                }
    }
}

void col2im(const Decoder::Layer& l, const double* col, double* in_grad) {
    const int k = l.kernel;
    const int p = k / 2;
    const int kd = l.kind == Kind::conv3d ? k : 1;
    const int pd = l.kind == Kind::conv3d ? p : 0;
    const int D = l.in.d, H = l.in.h, W = l.in.w;
    const std::size_t plane = static_cast<std::size_t>(D) * H * W;
    std::fill(in_grad, in_grad + l.in.size(), 0.0);
    for (int ci = 0; ci < l.in.c; ++ci) {
        double* dst = in_grad + ci * plane;
        for (int dz = 0; dz < kd; ++dz)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    const double* src = col + ((static_cast<std::size_t>(ci) * kd + dz) * k * k + dy * k + dx) * plane;
                    for (int z = 0; z < D; ++z) {
                        const int sz = z + dz - pd;
                        if (sz < 0 || sz >= D) continue;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + dy - p;
                            if (sy < 0 || sy >= H) continue;
                            const double* row = src + (static_cast<std::size_t>(z) * H + y) * W;
                            double* drow = dst + (static_cast<std::size_t>(sz) * H + sy) * W;
                            const int x0 = std::max(0, p - dx);
                            const int x1 = std::min(W, W + p - dx);
                            for (int x = x0; x < x1; ++x) drow[x + dx - p] += row[x];
                        }
                    }
                }
    }
}

} // namespace

void Architecture::validate(std::vector<std::string>& v, const std::string& p) const {
    if (latent_dim < 1) v.push_back(p + ".latent_dim: must be >= 1");
    if (base_channels < 1) v.push_back(p + ".base_channels: must be >= 1");
    if (nz < 1) v.push_back(p + ".nz: must be >= 1");
    for (int c : stage_channels)
        if (c < 1) v.push_back(p + ".stage_channels: entries must be >= 1");
    const int s = stages();
    if (s > 16 || nx <= 0 || ny <= 0 || (nx >> s) < 1 || (ny >> s) < 1 || ((nx >> s) << s) != nx ||
        ((ny >> s) << s) != ny)
        v.push_back(p + ".stage_channels: " + std::to_string(s) + " upsampling stages cannot reach " +
                    std::to_string(nx) + "x" + std::to_string(ny) + " (grid must be base * 2^stages)");
    if (!(leak >= 0.0 && leak < 1.0)) v.push_back(p + ".leak: must lie in [0, 1)");
    if (conv3d_head && head_channels < 1) v.push_back(p + ".head_channels: must be >= 1");
}

std::size_t parameter_count(const Architecture& a) {
    const std::size_t base = static_cast<std::size_t>(a.base_channels) * (a.nx >> a.stages()) * (a.ny >> a.stages());
    std::size_t n = base * a.latent_dim + base;
    int cin = a.base_channels;
    for (int c : a.stage_channels) {
        n += static_cast<std::size_t>(cin) * c * 9 + c;
        cin = c;
    }
    if (a.conv3d_head) {
        const std::size_t lift = static_cast<std::size_t>(a.head_channels) * a.nz;
        n += cin * lift + lift;
        n += static_cast<std::size_t>(a.head_channels) * 2 * 27 + 2;
    } else {
        n += static_cast<std::size_t>(cin) * 2 * a.nz + 2 * a.nz;
    }
    return n;
}

GeneratorParams empty_params(const Architecture& arch) {
    std::vector<std::string> v;
    arch.validate(v);
    if (!v.empty()) throw ConfigError(v);
    GeneratorParams p;
    p.arch = arch;
    const auto layers = build_layers(arch);
    std::size_t total = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight_size == 0) continue;
        const std::string prefix = "layer" + std::to_string(i);
        std::vector<int> wshape;
        switch (l.kind) {
        case Kind::dense: wshape = {static_cast<int>(l.out.size()), l.in.c}; break;
        case Kind::conv2d: wshape = {l.out.c, l.in.c, l.kernel, l.kernel}; break;
        case Kind::conv3d: wshape = {l.out.c, l.in.c, l.kernel, l.kernel, l.kernel}; break;
        default: break;
        }
        p.tensors.push_back({prefix + ".weight", wshape, l.weight_offset, l.weight_size});
        p.tensors.push_back({prefix + ".bias", {static_cast<int>(l.bias_size)}, l.bias_offset, l.bias_size});
        total = l.bias_offset + l.bias_size;
    }
    p.values.assign(total, 0.0);
    return p;
}

GeneratorParams init_params(const Architecture& arch, std::uint64_t seed) {
    GeneratorParams p = empty_params(arch);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& l : build_layers(arch)) {
        if (l.weight_size == 0) continue;
        const double fan_in = l.kind == Kind::dense ? l.in.c : static_cast<double>(col_rows(l));
        const double sd = l.gain / std::sqrt(fan_in);
        for (std::size_t i = 0; i < l.weight_size; ++i) p.values[l.weight_offset + i] = sd * normal(rng);
    }
    return p;
}

Decoder::Decoder(const Architecture& arch) : arch_(arch), layers_(build_layers(arch)) {
    acts_.resize(layers_.size() + 1);
    cols_.resize(layers_.size());
    grads_.resize(layers_.size() + 1);
    acts_[0].resize(arch.latent_dim);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        acts_[i + 1].resize(layers_[i].out.size());
        grads_[i + 1].resize(layers_[i].out.size());
        if (layers_[i].kind == Kind::conv2d || layers_[i].kind == Kind::conv3d)
            cols_[i].resize(col_rows(layers_[i]) * layers_[i].in.spatial());
    }
    grads_[0].resize(arch.latent_dim);
}

Decoder::~Decoder() = default;
Decoder::Decoder(Decoder&&) noexcept = default;
Decoder& Decoder::operator=(Decoder&&) noexcept = default;

void Decoder::forward(const GeneratorParams& params, std::span<const double> latent) {
    if (static_cast<int>(latent.size()) != arch_.latent_dim)
        throw ShapeError("latent has dimension " + std::to_string(latent.size()) + ", generator expects " +
                         std::to_string(arch_.latent_dim));
    if (!(params.arch == arch_)) throw ShapeError("parameters were built for a different architecture");
    std::copy(latent.begin(), latent.end(), acts_[0].begin());
    const double* theta = params.values.data();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        const std::vector<double>& in = acts_[i];
        std::vector<double>& out = acts_[i + 1];
        switch (l.kind) {
        case Kind::dense: {
            ConstMatMap w(theta + l.weight_offset, l.out.size(), l.in.c);
            Eigen::Map<const Eigen::VectorXd> x(in.data(), l.in.c);
            Eigen::Map<const Eigen::VectorXd> b(theta + l.bias_offset, l.bias_size);
            Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) = w * x + b;
            break;
        }
        case Kind::leaky_relu:
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : arch_.leak * in[j];
            break;
        case Kind::upsample2x: {
            const int H = l.in.h, W = l.in.w;
            for (int c = 0; c < l.in.c; ++c)
                for (int y = 0; y < 2 * H; ++y) {
                    const double* src = in.data() + (static_cast<std::size_t>(c) * H + y / 2) * W;
                    double* dst = out.data() + (static_cast<std::size_t>(c) * 2 * H + y) * 2 * W;
                    for (int x = 0; x < 2 * W; ++x) dst[x] = src[x / 2];
                }
            break;
        }
        case Kind::conv2d:
        case Kind::conv3d: {
            const std::size_t rows = col_rows(l);
            const std::size_t spatial = l.in.spatial();
            const double* col = in.data();
            if (l.kernel > 1) {
                im2col(l, in.data(), cols_[i].data());
                col = cols_[i].data();
            }
            ConstMatMap w(theta + l.weight_offset, l.out.c, rows);
            ConstMatMap x(col, rows, spatial);
            MatMap y(out.data(), l.out.c, spatial);
            y.noalias() = w * x;
            Eigen::Map<const Eigen::VectorXd> b(theta + l.bias_offset, l.out.c);
            y.colwise() += b;
            break;
        }
        }
    }
}

std::span<const double> Decoder::output() const { return acts_.back(); }

void Decoder::slice(int z, std::span<cdouble> image) const {
    const std::size_t n = static_cast<std::size_t>(arch_.nx) * arch_.ny;
    if (z < 0 || z >= arch_.nz) throw IndexError("decoder slice out of range");
    if (image.size() != n) throw ShapeError("decoder slice buffer has wrong size");
    const double* re = acts_.back().data() + static_cast<std::size_t>(z) * n;
    const double* im = acts_.back().data() + static_cast<std::size_t>(arch_.nz + z) * n;
    for (std::size_t i = 0; i < n; ++i) image[i] = cdouble(re[i], im[i]);
}

Volume3D Decoder::volume() const {
    Volume3D v({arch_.nx, arch_.ny, arch_.nz});
    for (int z = 0; z < arch_.nz; ++z) slice(z, v.slice(z));
    return v;
}

void Decoder::backward(const GeneratorParams& params, std::span<const double> output_grad,
                       std::span<double> grad_theta, std::span<double> grad_latent) {
    if (output_grad.size() != acts_.back().size()) throw ShapeError("output gradient has wrong size");
    if (grad_theta.size() != params.values.size()) throw ShapeError("parameter gradient has wrong size");
    if (static_cast<int>(grad_latent.size()) != arch_.latent_dim) throw ShapeError("latent gradient has wrong size");
    const double* theta = params.values.data();
    std::copy(output_grad.begin(), output_grad.end(), grads_.back().begin());
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
        const Layer& l = layers_[ii];
        const std::vector<double>& in = acts_[ii];
        const std::vector<double>& gout = grads_[ii + 1];
        std::vector<double>& gin = grads_[ii];
        switch (l.kind) {
        case Kind::dense: {
            ConstMatMap w(theta + l.weight_offset, l.out.size(), l.in.c);
            Eigen::Map<const Eigen::VectorXd> g(gout.data(), gout.size());
            Eigen::Map<const Eigen::VectorXd> x(in.data(), l.in.c);
            MatMap(grad_theta.data() + l.weight_offset, l.out.size(), l.in.c).noalias() += g * x.transpose();
            Eigen::Map<Eigen::VectorXd>(grad_theta.data() + l.bias_offset, l.bias_size) += g;
            Eigen::Map<Eigen::VectorXd>(gin.data(), l.in.c).noalias() = w.transpose() * g;
            break;
        }
        case Kind::leaky_relu:
            for (std::size_t j = 0; j < gin.size(); ++j) gin[j] = in[j] > 0.0 ? gout[j] : arch_.leak * gout[j];
            break;
        case Kind::upsample2x: {
            const int H = l.in.h, W = l.in.w;
            std::fill(gin.begin(), gin.end(), 0.0);
            for (int c = 0; c < l.in.c; ++c)
                for (int y = 0; y < 2 * H; ++y) {
                    const double* src = gout.data() + (static_cast<std::size_t>(c) * 2 * H + y) * 2 * W;
                    double* dst = gin.data() + (static_cast<std::size_t>(c) * H + y / 2) * W;
                    for (int x = 0; x < 2 * W; ++x) dst[x / 2] += src[x];
                }
            break;
        }
        case Kind::conv2d:
        case Kind::conv3d: {
            const std::size_t rows = col_rows(l);
            const std::size_t spatial = l.in.spatial();
            const double* col = l.kernel > 1 ? cols_[ii].data() : in.data();
            ConstMatMap w(theta + l.weight_offset, l.out.c, rows);
            ConstMatMap x(col, rows, spatial);
            ConstMatMap g(gout.data(), l.out.c, spatial);
            MatMap(grad_theta.data() + l.weight_offset, l.out.c, rows).noalias() += g * x.transpose();
            Eigen::Map<Eigen::VectorXd>(grad_theta.data() + l.bias_offset, l.out.c) += g.rowwise().sum();
            if (ii == 0) break;
            if (l.kernel > 1) {
                std::vector<double>& gcol = cols_[ii]; // forward columns are no longer needed
                MatMap(gcol.data(), rows, spatial).noalias() = w.transpose() * g;
                col2im(l, gcol.data(), gin.data());
            } else {
                MatMap(gin.data(), rows, spatial).noalias() = w.transpose() * g;
            }
            break;
        }
        }
    }
    std::copy(grads_[0].begin(), grads_[0].end(), grad_latent.begin());
}

Volume3D decode(const GeneratorParams& params, std::span<const double> latent) {
    Decoder d(params.arch);
    d.forward(params, latent);
    return d.volume();
}

DecodeGradient decode_grad(const GeneratorParams& params, std::span<const double> latent,
                           const Volume3D& cotangent) {
    const Architecture& a = params.arch;
    if (!(cotangent.shape() == GridShape{a.nx, a.ny, a.nz}))
        throw ShapeError("cotangent does not match generator output shape");
    Decoder d(a);
    d.forward(params, latent);
    const std::size_t n = static_cast<std::size_t>(a.nx) * a.ny;
    std::vector<double> g(2 * n * a.nz);
    for (int z = 0; z < a.nz; ++z) {
        auto s = cotangent.slice(z);
        for (std::size_t i = 0; i < n; ++i) {
            g[z * n + i] = s[i].real();
            g[(a.nz + z) * n + i] = s[i].imag();
        }
    }
    DecodeGradient out{std::vector<double>(params.count(), 0.0), std::vector<double>(a.latent_dim)};
    d.backward(params, g, out.theta, out.latent);
    return out;
}

} // namespace vstorm
