#include "doctest.h"

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vstorm/generator.hpp"

using namespace vstorm;

namespace {

Architecture small_arch(bool conv3d) {
    Architecture a;
    a.nx = a.ny = 8;
    a.nz = 3;
    a.base_channels = 3;
    a.stage_channels = {4, 2};
    a.conv3d_head = conv3d;
    a.head_channels = 2;
    return a;
}

double inner(const Volume3D& a, const Volume3D& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        s += a.data()[i].real() * b.data()[i].real() + a.data()[i].imag() * b.data()[i].imag();
    return s;
}

const TensorInfo& tensor(const GeneratorParams& p, const std::string& name) {
    for (const auto& t : p.tensors)
        if (t.name == name) return t;
    FAIL("missing tensor " << name);
    return p.tensors.front();
}

} // namespace

TEST_SUITE("generator") {

TEST_CASE("parameter count of the default architecture") {
    const Architecture a;
    // dense 2 -> 32x4x4, four 3x3 stages, 1x1 head to 8 channels
    const std::size_t expect = (2 * 512 + 512) + (32 * 32 * 9 + 32) + (32 * 32 * 9 + 32) + (32 * 16 * 9 + 16) +
                               (16 * 16 * 9 + 16) + (16 * 8 + 8);
    CHECK(parameter_count(a) == expect);
    CHECK(init_params(a, 1).count() == expect);
    Architecture b = small_arch(true);
    CHECK(parameter_count(b) == init_params(b, 1).count());
}

TEST_CASE("decode is deterministic, finite and seeded") {
    const Architecture a;
    const GeneratorParams p = init_params(a, 3);
    CHECK(init_params(a, 3).values == p.values);
    CHECK(init_params(a, 4).values != p.values);
    const std::vector<double> c{0.3, -0.2};
    const Volume3D v1 = decode(p, c), v2 = decode(p, c);
    CHECK(v1 == v2);
    CHECK(v1.shape() == GridShape{64, 64, 4});
    double n = 0.0;
    for (auto x : v1.data()) n += std::norm(x);
    CHECK(std::isfinite(n));
    CHECK(n > 0.0);
    CHECK_THROWS_AS(decode(p, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("zeroed final layer gives a zero volume") {
    for (bool conv3d : {false, true}) {
        GeneratorParams p = init_params(small_arch(conv3d), 2);
        const TensorInfo& w = p.tensors[p.tensors.size() - 2];
        const TensorInfo& b = p.tensors.back();
        std::fill(p.values.begin() + w.offset, p.values.begin() + w.offset + w.size, 0.0);
        std::fill(p.values.begin() + b.offset, p.values.begin() + b.offset + b.size, 0.0);
        const Volume3D out = decode(p, std::vector<double>{0.5, 0.5});
        for (auto v : out.data()) CHECK(v == cdouble(0.0));
    }
}

TEST_CASE("zero cotangent gives zero gradients") {
    const GeneratorParams p = init_params(small_arch(false), 2);
    const auto g = decode_grad(p, std::vector<double>{0.1, 0.2}, Volume3D({8, 8, 3}));
    for (double v : g.theta) CHECK(v == 0.0);
    for (double v : g.latent) CHECK(v == 0.0);
    CHECK_THROWS_AS(decode_grad(p, std::vector<double>{0.1, 0.2}, Volume3D({8, 8, 2})), ShapeError);
}

TEST_CASE("gradients match central differences") {
    for (bool conv3d : {false, true}) {
        CAPTURE(conv3d);
        const GeneratorParams p = init_params(small_arch(conv3d), 7);
        std::mt19937_64 rng(11);
        const Volume3D cot = oracle::random_volume({8, 8, 3}, rng);
        const std::vector<double> c{0.4, -0.7};
        const auto g = decode_grad(p, c, cot);
        const double h = 1e-6;

        // Directional derivative along a random direction in theta.
        std::normal_distribution<double> n01(0.0, 1.0);
        std::vector<double> dir(p.count());
        for (auto& d : dir) d = n01(rng);
        GeneratorParams pp = p, pm = p;
        for (std::size_t i = 0; i < dir.size(); ++i) {
            pp.values[i] += h * dir[i];
            pm.values[i] -= h * dir[i];
        }
        const double fd = (inner(decode(pp, c), cot) - inner(decode(pm, c), cot)) / (2 * h);
        double an = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) an += g.theta[i] * dir[i];
        CHECK(std::abs(fd - an) / std::abs(an) < 1e-4);

        // Every tensor individually.
        for (const auto& t : p.tensors) {
            CAPTURE(t.name);
            std::vector<double> d(p.count(), 0.0);
            for (std::size_t i = 0; i < t.size; ++i) d[t.offset + i] = n01(rng);
            GeneratorParams a = p, b = p;
            double ref = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                a.values[i] += h * d[i];
                b.values[i] -= h * d[i];
                ref += g.theta[i] * d[i];
            }
            const double f = (inner(decode(a, c), cot) - inner(decode(b, c), cot)) / (2 * h);
            CHECK(std::abs(f - ref) <= 1e-4 * std::abs(ref) + 1e-9);
        }

        for (int j = 0; j < 2; ++j) {
            auto cp = c, cm = c;
            cp[j] += h;
            cm[j] -= h;
            const double f = (inner(decode(p, cp), cot) - inner(decode(p, cm), cot)) / (2 * h);
            CHECK(std::abs(f - g.latent[j]) <= 1e-4 * std::abs(g.latent[j]) + 1e-9);
        }
    }
}

TEST_CASE("directional derivative in the latent matches the JVP") {
    const GeneratorParams p = init_params(Architecture{}, 5);
    const std::vector<double> c{0.2, 0.1}, dir{0.6, -0.8};
    const Volume3D v0 = decode(p, c);
    // JVP from the reverse pass: d/dt <e_k, D(c + t dir)> for a cotangent equal to the FD direction.
    const double h = 1e-5;
    std::vector<double> cp{c[0] + h * dir[0], c[1] + h * dir[1]}, cm{c[0] - h * dir[0], c[1] - h * dir[1]};
    const Volume3D vp = decode(p, cp), vm = decode(p, cm);
    Volume3D jvp_fd(v0.shape());
    for (std::size_t i = 0; i < v0.data().size(); ++i) jvp_fd.data()[i] = (vp.data()[i] - vm.data()[i]) / (2 * h);
    const auto g = decode_grad(p, c, jvp_fd);
    const double an = g.latent[0] * dir[0] + g.latent[1] * dir[1]; // = <J dir, J dir>
    CHECK(an == doctest::Approx(inner(jvp_fd, jvp_fd)).epsilon(1e-3));
    // ||D(c + d) - D(c)|| -> 0
    double prev = 1e300;
    for (double s : {1e-1, 1e-2, 1e-3}) {
        const Volume3D v = decode(p, std::vector<double>{c[0] + s * dir[0], c[1] + s * dir[1]});
        double d = 0.0;
        for (std::size_t i = 0; i < v.data().size(); ++i) d += std::norm(v.data()[i] - v0.data()[i]);
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("linear regime: gradients are outer products") {
    // With no upsampling stages and activations kept positive the decoder is
    // h = W1 c + b1, y = W2 h + b2 (per pixel).
    Architecture a;
    a.nx = a.ny = 4;
    a.nz = 2;
    a.base_channels = 3;
    a.stage_channels = {};
    GeneratorParams p = init_params(a, 9);
    const TensorInfo& b1 = tensor(p, "layer0.bias");
    for (std::size_t i = 0; i < b1.size; ++i) p.values[b1.offset + i] = 5.0;
    const TensorInfo& w1 = tensor(p, "layer0.weight");
    const TensorInfo& w2 = tensor(p, "layer2.weight");
    const TensorInfo& b2 = tensor(p, "layer2.bias");
    const std::vector<double> c{0.3, -0.4};
    std::mt19937_64 rng(1);
    const Volume3D cot = oracle::random_volume({4, 4, 2}, rng);
    const auto g = decode_grad(p, c, cot);

    const int C = 3, P = 16, O = 4;
    // cotangent per output channel (re z0, re z1, im z0, im z1) and pixel
    auto cotv = [&](int o, int px) {
        const int z = o % 2;
        const cdouble v = cot.data()[z * P + px];
        return o < 2 ? v.real() : v.imag();
    };
    std::vector<double> h(C * P), gh(C * P, 0.0);
    for (int i = 0; i < C * P; ++i)
        h[i] = p.values[w1.offset + 2 * i] * c[0] + p.values[w1.offset + 2 * i + 1] * c[1] + 5.0;
    for (int o = 0; o < O; ++o)
        for (int ch = 0; ch < C; ++ch) {
            double s = 0.0;
            for (int px = 0; px < P; ++px) s += cotv(o, px) * h[ch * P + px];
            CHECK(g.theta[w2.offset + o * C + ch] == doctest::Approx(s).epsilon(1e-12));
        }
    for (int o = 0; o < O; ++o) {
        double s = 0.0;
        for (int px = 0; px < P; ++px) s += cotv(o, px);
        CHECK(g.theta[b2.offset + o] == doctest::Approx(s).epsilon(1e-12));
    }
    for (int ch = 0; ch < C; ++ch)
        for (int px = 0; px < P; ++px)
            for (int o = 0; o < O; ++o) gh[ch * P + px] += p.values[w2.offset + o * C + ch] * cotv(o, px);
    for (int i = 0; i < C * P; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(g.theta[w1.offset + 2 * i + j] == doctest::Approx(gh[i] * c[j]).epsilon(1e-12));
}

TEST_CASE("Lipschitz estimate at init is finite") {
    const GeneratorParams p = init_params(Architecture{}, 1);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n01(0.0, 1.0);
    double k = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> a{n01(rng), n01(rng)}, b{n01(rng), n01(rng)};
        const Volume3D va = decode(p, a), vb = decode(p, b);
        double d = 0.0;
        for (std::size_t j = 0; j < va.data().size(); ++j) d += std::norm(va.data()[j] - vb.data()[j]);
        k = std::max(k, std::sqrt(d) / std::hypot(a[0] - b[0], a[1] - b[1]));
    }
    CHECK(std::isfinite(k));
}

TEST_CASE("invalid architectures are rejected") {
    Architecture a;
    a.nx = 60;
    a.leak = 1.5;
    CHECK_THROWS_AS(init_params(a, 1), ConfigError);
}

}
