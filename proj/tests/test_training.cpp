#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "problems.hpp"
#include "vstorm/training.hpp"

using namespace vstorm;

namespace {

std::vector<FrameRef> all_refs(const Objective& obj) {
    std::vector<FrameRef> r;
    const auto n = obj.frame_counts();
    for (std::size_t k = 0; k < n.size(); ++k)
        for (int t = 0; t < n[k]; ++t) r.push_back({static_cast<int>(k), t});
    return r;
}

LatentSchedule schedule(const Objective& obj, int dim, std::uint64_t seed, double mu_sd = 0.3, double ls = -1.0) {
    LatentSchedule s;
    s.dim = dim;
    for (int n : obj.frame_counts()) s.tracks.push_back(init_track(n, dim, seed++, mu_sd, ls));
    return s;
}

// Sum of squares with brute-force NUDFT measurements of the decoded slice.
double oracle_data(const problems::Tiny& p, const Objective& obj, const GeneratorParams& params,
                   const LatentSchedule& lat, const std::vector<FrameRef>& refs, const std::vector<double>& eps) {
    double s = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& tr = lat.tracks[refs[i].track];
        std::vector<double> c(lat.dim);
        for (int j = 0; j < lat.dim; ++j)
            c[j] = tr.mu[refs[i].frame * lat.dim + j] + std::exp(tr.log_std[refs[i].frame * lat.dim + j]) * eps[i * lat.dim + j];
        const Volume3D x = decode(params, c);
        const auto& kt = obj.slices()[refs[i].track];
        const auto& f = kt.frames[refs[i].frame];
        const auto y = oracle::nudft(x, kt.slice, f.points, *p.maps);
        for (std::size_t j = 0; j < y.size(); ++j) s += std::norm(y[j] - f.data[j]);
    }
    return s;
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("mode names") {
    for (auto m : {TrainMode::vstorm_ms, TrainMode::gstorm_ms, TrainMode::vstorm_ss, TrainMode::gstorm_ss})
        CHECK(parse_mode(to_string(m)) == m);
    CHECK(to_string(TrainMode::gstorm_ms) == "G-SToRM:MS");
    CHECK_THROWS_AS(parse_mode("VAE"), ConfigError);
    CHECK(is_variational(TrainMode::vstorm_ss));
    CHECK_FALSE(is_multislice(TrainMode::vstorm_ss));
}

TEST_CASE("data term against a brute-force oracle") {
    const auto p = problems::tiny(8, 1, 1, 20, 1);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    const GeneratorParams params = init_params(p.arch, 2);
    const LatentSchedule lat = schedule(obj, 2, 3);
    const std::vector<FrameRef> refs{{0, 0}};
    const std::vector<double> eps{0.4, -1.1};
    const double v = obj.data_term(params, lat, refs, eps);
    CHECK(v == doctest::Approx(oracle_data(p, obj, params, lat, refs, eps)).epsilon(1e-10));
}

TEST_CASE("data term: perfect fit and zero generator") {
    auto p = problems::tiny(8, 2, 2, 15, 4);
    const GeneratorParams params = init_params(p.arch, 5);
    const Objective probe(p.slices, p.maps, TransformMode::direct);
    const LatentSchedule lat = schedule(probe, 2, 6);
    // Replace the data by the forward model of the decoded means.
    for (std::size_t k = 0; k < p.slices.size(); ++k)
        for (int t = 0; t < 2; ++t) {
            const Volume3D x = decode(params, lat.tracks[k].mu_row(t));
            p.slices[k].frames[t].data = probe.op(static_cast<int>(k), t).forward(x);
        }
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    const auto refs = all_refs(obj);
    const std::vector<double> zero(refs.size() * 2, 0.0);
    CHECK(obj.data_term(params, lat, refs, zero) < 1e-20);

    const GeneratorParams none = empty_params(p.arch);
    double energy = 0.0;
    for (const auto& kt : p.slices)
        for (const auto& f : kt.frames)
            for (auto b : f.data) energy += std::norm(b);
    CHECK(obj.data_term(none, lat, refs, zero) == doctest::Approx(energy).epsilon(1e-12));
    CHECK(obj.mean_frame_energy() == doctest::Approx(energy / 4).epsilon(1e-12));

    CHECK_THROWS_AS(obj.data_term(params, lat, std::vector<FrameRef>{{0, 5}}, std::vector<double>{0, 0}),
                    ConsistencyError);
    CHECK_THROWS_AS(obj.data_term(params, lat, refs, std::vector<double>{0.0}), ShapeError);
}

TEST_CASE("total loss composition") {
    const auto p = problems::tiny(8, 2, 3, 10, 7);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    const GeneratorParams params = init_params(p.arch, 8);
    LatentSchedule prior = schedule(obj, 2, 9, 0.0, 0.0);
    const auto refs = all_refs(obj);
    std::vector<double> eps(refs.size() * 2, 0.3);
    LossWeights w{0.7, 0.0, 0.0, true, true};
    const LossTerms t = obj.total_loss(params, prior, refs, eps, w);
    CHECK(t.kl == 0.0);
    CHECK(t.total == doctest::Approx(obj.data_term(params, prior, refs, eps)).epsilon(1e-14));

    // (sum |theta|)^2 with sum |theta| = 2 and lambda1 = 0.5
    GeneratorParams two = empty_params(p.arch);
    two.values[0] = 1.5;
    two.values[3] = -0.5;
    LossWeights l1{0.0, 0.5, 0.0, true, true};
    CHECK(obj.total_loss(two, prior, refs, eps, l1).l1 == doctest::Approx(2.0).epsilon(1e-15));
    l1.l1_squared = false;
    CHECK(obj.total_loss(two, prior, refs, eps, l1).l1 == doctest::Approx(1.0).epsilon(1e-15));

    // Temporal term covers every frame of every track, not just the batch.
    LatentSchedule lat = schedule(obj, 2, 10);
    LossWeights sm{0.0, 0.0, 2.0, true, true};
    double expect = 0.0;
    for (const auto& tr : lat.tracks) expect += 2.0 * temporal_penalty(tr);
    const std::vector<FrameRef> one{{0, 0}};
    CHECK(obj.total_loss(params, lat, one, std::vector<double>{0, 0}, sm).smooth == doctest::Approx(expect));
}

TEST_CASE("mode equivalence at zero KL weight") {
    const auto p = problems::tiny(8, 2, 2, 10, 11);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    const GeneratorParams params = init_params(p.arch, 12);
    LatentSchedule lat = schedule(obj, 2, 13, 0.3, log_std_min);
    const auto refs = all_refs(obj);
    const std::vector<double> zero(refs.size() * 2, 0.0);
    const LossWeights v{0.0, 1e-3, 0.1, true, true};
    LossWeights g = v;
    g.variational = false;
    const double a = obj.total_loss(params, lat, refs, zero, v).total;
    const double b = obj.total_loss(params, lat, refs, std::vector<double>(refs.size() * 2, 1.0), g).total;
    CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("end-to-end gradient against central differences") {
    const auto p = problems::tiny(8, 2, 2, 12, 14);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    const GeneratorParams params = init_params(p.arch, 15);
    const LatentSchedule lat = schedule(obj, 2, 16);
    const auto refs = all_refs(obj);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> eps(refs.size() * 2);
    for (auto& e : eps) e = n01(rng);
    const double e0 = obj.mean_frame_energy();
    const LossWeights w{1e-2 * e0, 1e-4, 1e-2 * e0, true, true};
    Gradient g;
    obj.gradient(params, lat, refs, eps, w, g);
    auto loss = [&](const GeneratorParams& pp, const LatentSchedule& ll) {
        return obj.total_loss(pp, ll, refs, eps, w).total;
    };
    const double h = 1e-6;

    std::vector<double> d(params.count());
    for (auto& v : d) v = n01(rng);
    GeneratorParams a = params, b = params;
    double an = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        a.values[i] += h * d[i];
        b.values[i] -= h * d[i];
        an += g.theta[i] * d[i];
    }
    const double fd = (loss(a, lat) - loss(b, lat)) / (2 * h);
    CHECK(std::abs(fd - an) / std::abs(an) < 1e-4);

    for (int which = 0; which < 2; ++which)
        for (std::size_t k = 0; k < lat.tracks.size(); ++k)
            for (std::size_t i = 0; i < lat.tracks[k].mu.size(); ++i) {
                LatentSchedule lp = lat, lm = lat;
                auto& vp = which == 0 ? lp.tracks[k].mu : lp.tracks[k].log_std;
                auto& vm = which == 0 ? lm.tracks[k].mu : lm.tracks[k].log_std;
                vp[i] += h;
                vm[i] -= h;
                const double f = (loss(params, lp) - loss(params, lm)) / (2 * h);
                const double r = which == 0 ? g.mu[k][i] : g.log_std[k][i];
                CHECK(std::abs(f - r) <= 1e-4 * std::abs(r) + 1e-6 * std::abs(fd));
            }
}

TEST_CASE("Adam matches a longhand reference on a quadratic") {
    // f(x) = 3 (x - 2)^2
    AdamConfig cfg;
    AdamState s;
    oracle::ScalarAdam ref;
    std::vector<double> x{-1.0};
    double xr = -1.0;
    for (int i = 0; i < 500; ++i) {
        const std::vector<double> g{6.0 * (x[0] - 2.0)};
        adam_update(x, g, s, 0.05, cfg);
        xr = ref.step(xr, 6.0 * (xr - 2.0), 0.05);
        REQUIRE(std::abs(x[0] - xr) < 1e-12);
    }
    CHECK(std::abs(x[0] - 2.0) < 1e-2);

    std::vector<double> y{1.0, -2.0};
    AdamState z;
    adam_update(y, std::vector<double>{0.0, 0.0}, z, 0.1, cfg);
    CHECK(y == std::vector<double>{1.0, -2.0});
    CHECK_THROWS_AS(adam_update(y, std::vector<double>{0.0}, z, 0.1, cfg), ShapeError);
}

TEST_CASE("train step is deterministic and updates every block") {
    const auto p = problems::tiny(8, 2, 6, 10, 18);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    TrainConfig cfg;
    cfg.batch = 3;
    cfg.seed = 5;
    const LossWeights w = effective_weights(cfg, obj.mean_frame_energy(), 2);
    TrainState s0 = init_state(p.arch, obj.frame_counts(), cfg);
    TrainState a = s0, b = s0;
    train_step(a, obj, cfg, w);
    train_step(b, obj, cfg, w);
    CHECK(a.params.values == b.params.values);
    CHECK(a.latents.tracks[1].mu == b.latents.tracks[1].mu);
    CHECK(a.iteration == 1);
    REQUIRE(a.history.size() == 1);
    CHECK(a.history[0].terms.total > 0.0);
    CHECK(a.params.values != s0.params.values);
    CHECK(a.theta_opt.m.size() == a.params.values.size());
    CHECK(a.mu_opt[0].m.size() == a.latents.tracks[0].mu.size());

    // Frames outside the batch keep their log-std; batch frames move.
    std::vector<FrameRef> refs;
    std::vector<double> eps;
    draw_minibatch(obj, cfg, 0, 2, refs, eps);
    CHECK(refs.size() == 3);
    int moved = 0;
    for (const auto& r : refs)
        if (a.latents.tracks[r.track].log_std[r.frame * 2] != -2.0) ++moved;
    CHECK(moved == 3);

    // Non-variational modes zero the noise and freeze log-std.
    cfg.mode = TrainMode::gstorm_ms;
    draw_minibatch(obj, cfg, 0, 2, refs, eps);
    for (double e : eps) CHECK(e == 0.0);
    TrainState g = s0;
    train_step(g, obj, cfg, effective_weights(cfg, obj.mean_frame_energy(), 2));
    CHECK(g.latents.tracks[0].log_std == s0.latents.tracks[0].log_std);
}

TEST_CASE("non-finite loss aborts with a per-term dump") {
    const auto p = problems::tiny(8, 1, 3, 10, 19);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    TrainConfig cfg;
    TrainState s = init_state(p.arch, obj.frame_counts(), cfg);
    s.params.values[0] = std::numeric_limits<double>::infinity();
    try {
        train_step(s, obj, cfg, effective_weights(cfg, 1.0, 2));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("l1=") != std::string::npos);
    }
}

TEST_CASE("single-stage progressive training is the plain loop") {
    const auto p = problems::tiny(8, 2, 4, 10, 20);
    TrainConfig cfg;
    cfg.stages = 1;
    cfg.stage_split = {1.0};
    cfg.iterations = 5;
    cfg.batch = 2;
    const TrainState a = progressive_train(p.slices, p.maps, p.arch, cfg, {}, 0, TransformMode::direct);
    const Objective obj(p.slices, p.maps, TransformMode::direct);
    TrainState b = init_state(p.arch, obj.frame_counts(), cfg);
    const LossWeights w = effective_weights(cfg, obj.mean_frame_energy(), 2);
    for (int i = 0; i < 5; ++i) train_step(b, obj, cfg, w);
    CHECK(a.params.values == b.params.values);
    CHECK(a.latents.tracks[1].log_std == b.latents.tracks[1].log_std);
    CHECK(a.history.size() == 5);
}

TEST_CASE("two-stage schedule refines the tracks") {
    const auto p = problems::tiny(8, 1, 80, 4, 21, 1);
    TrainConfig cfg;
    cfg.stages = 2;
    cfg.stage_split = {0.5, 0.5};
    cfg.iterations = 4;
    cfg.batch = 2;
    std::vector<long> seen;
    const TrainState s = progressive_train(p.slices, p.maps, p.arch, cfg,
                                           [&](const TrainState& st, int) { seen.push_back(st.iteration); });
    CHECK(s.latents.tracks[0].frames == 80);
    CHECK(seen.empty());
    cfg.checkpoint_every = 2;
    progressive_train(p.slices, p.maps, p.arch, cfg, [&](const TrainState& st, int) { seen.push_back(st.iteration); });
    CHECK(seen == std::vector<long>{2, 4});

    // Manually: 40 coarse frames, refine, odd rows are neighbour means.
    const Objective coarse({rebin(p.slices[0], 2)}, p.maps);
    REQUIRE(coarse.frame_counts()[0] == 40);
    TrainState st = init_state(p.arch, coarse.frame_counts(), cfg);
    train_step(st, coarse, cfg, effective_weights(cfg, coarse.mean_frame_energy(), 2));
    const LatentTrack fine = refine_track(st.latents.tracks[0], 80);
    CHECK(fine.mu[2 * 3] == doctest::Approx(0.5 * (st.latents.tracks[0].mu[2 * 1] + st.latents.tracks[0].mu[2 * 2])));

    TrainConfig bad = cfg;
    bad.stages = 8;
    bad.stage_split.assign(8, 1.0);
    CHECK_THROWS_AS(progressive_train(p.slices, p.maps, p.arch, bad), ConfigError);
}

TEST_CASE("loss at a stage boundary changes only through the binning") {
    const auto p = problems::tiny(8, 1, 8, 6, 22, 1);
    const KTSlice c = rebin(p.slices[0], 2);
    const Objective coarse({c}, p.maps, TransformMode::direct);
    const Objective fine(p.slices, p.maps, TransformMode::direct);
    const GeneratorParams params = init_params(p.arch, 23);
    LatentSchedule lc = schedule(coarse, 2, 24);
    LatentSchedule lf;
    lf.dim = 2;
    lf.tracks.push_back(refine_track(lc.tracks[0], 8));
    // Even fine frames carry the coarse latent; the merged measurement of a
    // coarse frame is the union of its two fine frames.
    const std::vector<FrameRef> cref{{0, 1}};
    const std::vector<FrameRef> fref{{0, 2}};
    const std::vector<double> z{0.0, 0.0};
    const double dc = coarse.data_term(params, lc, cref, z);
    CHECK(dc == doctest::Approx(oracle_data(p, coarse, params, lc, cref, z)).epsilon(1e-10));
    const double df = fine.data_term(params, lf, fref, z);
    CHECK(df == doctest::Approx(oracle_data(p, fine, params, lf, fref, z)).epsilon(1e-10));
    // Fine frames 2 and 3 together hold the same samples as coarse frame 1;
    // decoded with the same latent they add up to the coarse value.
    LatentSchedule same = lf;
    for (int j = 0; j < 2; ++j) same.tracks[0].mu[3 * 2 + j] = same.tracks[0].mu[2 * 2 + j];
    const double both = fine.data_term(params, same, std::vector<FrameRef>{{0, 2}, {0, 3}}, std::vector<double>(4, 0.0));
    CHECK(both == doctest::Approx(dc).epsilon(1e-10));
}

TEST_CASE("variational and plain modes coincide when the KL path is inert") {
    const auto p = problems::tiny(8, 2, 8, 10, 25);
    TrainConfig cfg;
    cfg.stages = 2;
    cfg.stage_split = {0.5, 0.5};
    cfg.iterations = 10;
    cfg.batch = 3;
    cfg.sigma2 = 0.0;
    cfg.zero_epsilon = true;
    cfg.freeze_log_std = true;
    cfg.mode = TrainMode::vstorm_ms;
    const TrainState v = progressive_train(p.slices, p.maps, p.arch, cfg);
    cfg.mode = TrainMode::gstorm_ms;
    const TrainState g = progressive_train(p.slices, p.maps, p.arch, cfg);
    double d = 0.0;
    for (std::size_t i = 0; i < v.params.values.size(); ++i) d = std::max(d, std::abs(v.params.values[i] - g.params.values[i]));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < v.latents.tracks[k].mu.size(); ++i)
            d = std::max(d, std::abs(v.latents.tracks[k].mu[i] - g.latents.tracks[k].mu[i]));
    CHECK(d <= 1e-10);
}

TEST_CASE("single-slice modes train one model per slice") {
    const auto p = problems::tiny(8, 2, 4, 8, 26);
    TrainConfig cfg;
    cfg.stages = 1;
    cfg.stage_split = {1.0};
    cfg.iterations = 2;
    cfg.mode = TrainMode::vstorm_ss;
    const auto states = train_models(p.slices, p.maps, p.arch, cfg);
    REQUIRE(states.size() == 2);
    CHECK(states[0].latents.tracks.size() == 1);
    CHECK(states[0].params.values != states[1].params.values);
    cfg.mode = TrainMode::vstorm_ms;
    CHECK(train_models(p.slices, p.maps, p.arch, cfg).size() == 1);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.sigma2 = -1.0;
    cfg.stages = 0;
    cfg.batch = 0;
    std::vector<std::string> v;
    cfg.validate(v);
    CHECK(v.size() >= 3);
}

}
