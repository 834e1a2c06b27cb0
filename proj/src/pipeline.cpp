#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "vstorm/io.hpp"

namespace vstorm {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

ArrayContainer require(const fs::path& dir, const std::string& producer) {
    if (!container_exists(dir))
        throw DependencyError("missing container " + dir.string() + " (run '" + producer + "' first)");
    return load_container(dir);
}

// ---- ground truth ----

ArrayContainer truth_container(const GroundTruth& gt) {
    const int nzs = gt.slices();
    const int frames = static_cast<int>(gt.records.at(0).size());
    const GridShape g = gt.at(0, 0).volume.shape();
    std::vector<double> vol, cardiac, resp, time;
    vol.reserve(sz(nzs) * sz(frames) * g.voxels());
    for (const auto& row : gt.records)
        for (const auto& r : row) {
            for (auto v : r.volume.data()) vol.push_back(v.real());
            cardiac.push_back(r.state.cardiac);
            resp.push_back(r.state.resp);
            time.push_back(r.time_s);
        }
    ArrayContainer c;
    c.meta = {{"kind", "ground_truth"}};
    const std::vector<std::size_t> st{sz(nzs), sz(frames)};
    c.arrays.push_back(NamedArray::real("volume", "slice,t,z,y,x",
                                        {sz(nzs), sz(frames), sz(g.nz), sz(g.ny), sz(g.nx)}, vol));
    c.arrays.push_back(NamedArray::real("cardiac_phase", "slice,t", st, cardiac));
    c.arrays.push_back(NamedArray::real("resp_phase", "slice,t", st, resp));
    c.arrays.push_back(NamedArray::real("time_s", "slice,t", st, time));
    return c;
}

GroundTruth truth_from_container(const ArrayContainer& c) {
    const NamedArray& v = c.get("volume");
    if (v.shape.size() != 5) throw CorruptionError("array volume: expected 5 axes");
    const int nzs = static_cast<int>(v.shape[0]);
    const int frames = static_cast<int>(v.shape[1]);
    const GridShape g{static_cast<int>(v.shape[4]), static_cast<int>(v.shape[3]), static_cast<int>(v.shape[2])};
    const auto vol = v.to_real();
    const auto cardiac = c.get("cardiac_phase").to_real();
    const auto resp = c.get("resp_phase").to_real();
    const auto time = c.get("time_s").to_real();
    if (cardiac.size() != sz(nzs) * sz(frames) || resp.size() != cardiac.size() || time.size() != cardiac.size())
        throw CorruptionError("array cardiac_phase: does not match the volume array");
    GroundTruth gt;
    gt.records.resize(nzs);
    std::size_t off = 0;
    for (int z = 0; z < nzs; ++z)
        for (int t = 0; t < frames; ++t) {
            GroundTruthRecord r;
            r.slice = z;
            r.frame = t;
            const std::size_t i = sz(z) * sz(frames) + sz(t);
            r.time_s = time[i];
            r.state = {cardiac[i], resp[i]};
            r.volume = Volume3D(g);
            for (auto& x : r.volume.data()) x = vol[off++];
            gt.records[z].push_back(std::move(r));
        }
    return gt;
}

// ---- k-space ----

ArrayContainer kspace_container(const Simulation& sim) {
    ArrayContainer c;
    const CoilMaps& m = *sim.maps;
    c.meta = {{"kind", "kspace"}, {"slices", std::to_string(sim.kspace.size())}};
    c.arrays.push_back(NamedArray::complex("coil_maps", "coil,z,y,x",
                                           {sz(m.ncoils), sz(m.shape.nz), sz(m.shape.ny), sz(m.shape.nx)}, m.data));
    for (const KTSlice& s : sim.kspace) {
        const std::string p = "slice" + std::to_string(s.slice) + ".";
        c.meta[p + "ncoils"] = std::to_string(s.ncoils);
        c.meta[p + "noise_sd"] = sci(s.noise_sd);
        std::vector<double> counts, times, inter_counts, inters, kxy, dens;
        std::vector<cdouble> data;
        for (const KTFrame& f : s.frames) {
            counts.push_back(static_cast<double>(f.points.size()));
            inter_counts.push_back(static_cast<double>(f.interleaves.size()));
            times.push_back(f.time_s);
            for (int k : f.interleaves) inters.push_back(k);
            for (const KPoint& q : f.points) {
                kxy.push_back(q.kx);
                kxy.push_back(q.ky);
            }
            dens.insert(dens.end(), f.density_weights.begin(), f.density_weights.end());
            data.insert(data.end(), f.data.begin(), f.data.end());
        }
        c.arrays.push_back(NamedArray::real(p + "points_per_frame", "t", {counts.size()}, counts));
        c.arrays.push_back(NamedArray::real(p + "interleaves_per_frame", "t", {inter_counts.size()}, inter_counts));
        c.arrays.push_back(NamedArray::real(p + "interleaves", "n", {inters.size()}, inters));
        c.arrays.push_back(NamedArray::real(p + "time_s", "t", {times.size()}, times));
        c.arrays.push_back(NamedArray::real(p + "k", "n,kxky", {kxy.size() / 2, 2}, kxy));
        c.arrays.push_back(NamedArray::real(p + "density", "n", {dens.size()}, dens));
        c.arrays.push_back(NamedArray::complex(p + "data", "t,coil,n", {data.size()}, data));
    }
    return c;
}

Simulation kspace_from_container(const ArrayContainer& c) {
    Simulation sim;
    const NamedArray& ma = c.get("coil_maps");
    if (ma.shape.size() != 4) throw CorruptionError("array coil_maps: expected 4 axes");
    CoilMaps maps;
    maps.ncoils = static_cast<int>(ma.shape[0]);
    maps.shape = {static_cast<int>(ma.shape[3]), static_cast<int>(ma.shape[2]), static_cast<int>(ma.shape[1])};
    maps.data = ma.to_complex();
    sim.maps = std::make_shared<const CoilMaps>(std::move(maps));
    const int slices = std::stoi(c.meta.at("slices"));
    for (int z = 0; z < slices; ++z) {
        const std::string p = "slice" + std::to_string(z) + ".";
        KTSlice s;
        s.slice = z;
        s.ncoils = std::stoi(c.meta.at(p + "ncoils"));
        s.noise_sd = std::stod(c.meta.at(p + "noise_sd"));
        const auto counts = c.get(p + "points_per_frame").to_real();
        const auto inter_counts = c.get(p + "interleaves_per_frame").to_real();
        const auto inters = c.get(p + "interleaves").to_real();
        const auto times = c.get(p + "time_s").to_real();
        const auto kxy = c.get(p + "k").to_real();
        const auto dens = c.get(p + "density").to_real();
        const auto data = c.get(p + "data").to_complex();
        std::size_t pi = 0, ii = 0, di = 0;
        for (std::size_t t = 0; t < counts.size(); ++t) {
            KTFrame f;
            f.index = static_cast<int>(t);
            f.time_s = times.at(t);
            const auto n = static_cast<std::size_t>(counts[t]);
            for (std::size_t j = 0; j < static_cast<std::size_t>(inter_counts.at(t)); ++j)
                f.interleaves.push_back(static_cast<int>(inters.at(ii++)));
            if ((pi + n) * 2 > kxy.size() || pi + n > dens.size() || di + n * sz(s.ncoils) > data.size())
                throw CorruptionError("array " + p + "data: shorter than its frame table");
            for (std::size_t j = 0; j < n; ++j) f.points.push_back({kxy[2 * (pi + j)], kxy[2 * (pi + j) + 1]});
            f.density_weights.assign(dens.begin() + static_cast<std::ptrdiff_t>(pi),
                                     dens.begin() + static_cast<std::ptrdiff_t>(pi + n));
            f.data.assign(data.begin() + static_cast<std::ptrdiff_t>(di),
                          data.begin() + static_cast<std::ptrdiff_t>(di + n * sz(s.ncoils)));
            pi += n;
            di += n * sz(s.ncoils);
            s.frames.push_back(std::move(f));
        }
        sim.kspace.push_back(std::move(s));
    }
    return sim;
}

ArrayContainer trajectory_container(const std::vector<Trajectory>& inter, const FrameBinning& binning) {
    std::vector<double> triplets, angles;
    const std::size_t n = inter.empty() ? 0 : inter[0].points.size();
    for (const Trajectory& t : inter) {
        for (std::size_t i = 0; i < t.points.size(); ++i) {
            triplets.push_back(t.points[i].kx);
            triplets.push_back(t.points[i].ky);
            triplets.push_back(t.density_weights[i]);
        }
        angles.push_back(t.angle);
    }
    std::vector<double> frame_of(inter.size(), -1.0);
    for (int f = 0; f < binning.frame_count(); ++f)
        for (int k : binning.frames[f]) frame_of[k] = f;
    ArrayContainer c;
    c.meta = {{"kind", "trajectories"}};
    c.arrays.push_back(NamedArray::real("trajectory", "interleave,n,kx_ky_weight", {inter.size(), n, 3}, triplets));
    c.arrays.push_back(NamedArray::real("angle", "interleave", {angles.size()}, angles));
    c.arrays.push_back(NamedArray::real("frame", "interleave", {frame_of.size()}, frame_of));
    return c;
}

// ---- models ----

fs::path model_dir(const fs::path& out, int m) { return out / "checkpoints" / ("model" + std::to_string(m)); }

int model_count(const ExperimentConfig& cfg) { return is_multislice(cfg.train.mode) ? 1 : cfg.phantom.nz; }

ModelSet load_models(const ExperimentConfig& cfg, const fs::path& out) {
    ModelSet ms;
    ms.mode = cfg.train.mode;
    for (int m = 0; m < model_count(cfg); ++m) {
        const ArrayContainer c = require(model_dir(out, m) / "final", "train");
        const auto it = c.meta.find("mode");
        if (it == c.meta.end() || it->second != to_string(cfg.train.mode))
            throw DependencyError("checkpoint " + (model_dir(out, m) / "final").string() + " was not trained with mode " +
                                  to_string(cfg.train.mode) + " (run 'train' first)");
        ms.states.push_back(state_from_checkpoint(c));
    }
    return ms;
}

// ---- reports ----

json report_json(const ReconReport& r) {
    json j;
    j["mode"] = r.mode;
    j["source_slice"] = r.source_slice;
    auto ser = json::array();
    for (const auto& s : r.ser) ser.push_back(s.saturated ? json("inf") : json(s.db));
    j["ser_db"] = ser;
    j["divergence"] = r.divergence;
    auto cross = json::array();
    for (const auto& row : r.cross_ser) {
        auto jr = json::array();
        for (const auto& s : row) jr.push_back(s.saturated ? json("inf") : json(s.db));
        cross.push_back(jr);
    }
    j["cross_ser_db"] = cross;
    j["max_divergence"] = r.max_divergence();
    j["cross_drop_db"] = r.cross_drop();
    auto phase = json::array();
    for (const auto& p : r.phase)
        phase.push_back({{"cardiac_mean", p.cardiac_mean},
                         {"cardiac_p95", p.cardiac_p95},
                         {"resp_mean", p.resp_mean},
                         {"resp_p95", p.resp_p95}});
    j["phase_error_rad"] = phase;
    return j;
}

std::vector<LossRecord> parse_loss_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing loss table " + path.string() + " (run 'train' first)");
    std::vector<LossRecord> h;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LossRecord r;
        ls >> r.iteration >> r.terms.total >> r.terms.data >> r.terms.kl >> r.terms.l1 >> r.terms.smooth;
        if (ls) h.push_back(r);
    }
    return h;
}

struct Canvas {
    int w, h;
    std::vector<std::uint8_t> rgb;
    using Color = std::array<std::uint8_t, 3>;

    Canvas(int width, int height) : w(width), h(height), rgb(3 * sz(width) * sz(height), 255) {}
    void put(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        std::copy(c.begin(), c.end(), rgb.begin() + 3 * (sz(y) * sz(w) + sz(x)));
    }
    void line(int x0, int y0, int x1, int y1, Color c) {
        const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
        for (int s = 0; s <= steps; ++s) {
            const double a = steps ? static_cast<double>(s) / steps : 0.0;
            put(x0 + static_cast<int>(std::lround(a * (x1 - x0))), y0 + static_cast<int>(std::lround(a * (y1 - y0))), c);
        }
    }
    void dot(int x, int y, Color c) {
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) put(x + dx, y + dy, c);
    }
    void frame(int x0, int y0, int x1, int y1) {
        line(x0, y0, x1, y0, {0, 0, 0});
        line(x0, y1, x1, y1, {0, 0, 0});
        line(x0, y0, x0, y1, {0, 0, 0});
        line(x1, y0, x1, y1, {0, 0, 0});
    }
};

const std::array<Canvas::Color, 6> palette{
    {{200, 30, 30}, {30, 90, 200}, {20, 150, 60}, {200, 120, 0}, {120, 40, 160}, {0, 150, 150}}};

struct Range {
    double lo = 1e300, hi = -1e300;
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double unit(double v) const { return hi > lo ? (v - lo) / (hi - lo) : 0.5; }
};

void plot_losses(const fs::path& path, const std::vector<std::vector<LossRecord>>& curves) {
    const int w = 640, h = 360, pad = 20;
    Canvas cv(w, h);
    Range y;
    long iters = 1;
    for (const auto& c : curves)
        for (const auto& r : c)
            if (r.terms.total > 0.0) {
                y.add(std::log10(r.terms.total));
                iters = std::max(iters, r.iteration + 1);
            }
    cv.frame(pad, pad, w - pad, h - pad);
    for (std::size_t m = 0; m < curves.size(); ++m) {
        int px = -1, py = -1;
        for (const auto& r : curves[m]) {
            if (r.terms.total <= 0.0) continue;
            const int x = pad + static_cast<int>((w - 2 * pad) * static_cast<double>(r.iteration) / iters);
            const int yy = h - pad - static_cast<int>((h - 2 * pad) * y.unit(std::log10(r.terms.total)));
            if (px >= 0) cv.line(px, py, x, yy, palette[m % palette.size()]);
            px = x;
            py = yy;
        }
    }
    write_ppm(path, w, h, cv.rgb);
}

// One panel per slice, one curve per latent dimension.
void plot_latent_timecourse(const fs::path& path, const ModelSet& models) {
    const int n = models.slices(), pw = 480, ph = 120, pad = 10;
    Canvas cv(pw + 2 * pad, n * (ph + pad) + pad);
    Range y;
    for (int z = 0; z < n; ++z)
        for (double v : models.track_for(z).mu) y.add(v);
    for (int z = 0; z < n; ++z) {
        const LatentTrack& tr = models.track_for(z);
        const int top = pad + z * (ph + pad);
        cv.frame(pad, top, pad + pw, top + ph);
        for (int j = 0; j < tr.dim; ++j)
            for (int t = 1; t < tr.frames; ++t) {
                auto px = [&](int f) { return pad + static_cast<int>(pw * static_cast<double>(f) / std::max(1, tr.frames - 1)); };
                auto py = [&](int f) { return top + ph - static_cast<int>(ph * y.unit(tr.mu_row(f)[j])); };
                cv.line(px(t - 1), py(t - 1), px(t), py(t), palette[j % palette.size()]);
            }
    }
    write_ppm(path, cv.w, cv.h, cv.rgb);
}

// First two latent dimensions of every frame, coloured by slice.
void plot_latent_scatter(const fs::path& path, const ModelSet& models) {
    const int side = 400, pad = 20;
    Canvas cv(side + 2 * pad, side + 2 * pad);
    Range x, y;
    for (int z = 0; z < models.slices(); ++z) {
        const LatentTrack& tr = models.track_for(z);
        for (int t = 0; t < tr.frames; ++t) {
            x.add(tr.mu_row(t)[0]);
            y.add(tr.dim > 1 ? tr.mu_row(t)[1] : 0.0);
        }
    }
    cv.frame(pad, pad, pad + side, pad + side);
    for (int z = 0; z < models.slices(); ++z) {
        const LatentTrack& tr = models.track_for(z);
        for (int t = 0; t < tr.frames; ++t)
            cv.dot(pad + static_cast<int>(side * x.unit(tr.mu_row(t)[0])),
                   pad + side - static_cast<int>(side * y.unit(tr.dim > 1 ? tr.mu_row(t)[1] : 0.0)),
                   palette[z % palette.size()]);
    }
    write_ppm(path, cv.w, cv.h, cv.rgb);
}

void matrix_image(const fs::path& path, const std::vector<std::vector<double>>& m, int cell) {
    const int n = static_cast<int>(m.size());
    double hi = 0.0;
    for (const auto& row : m)
        for (double v : row)
            if (std::isfinite(v)) hi = std::max(hi, v);
    std::vector<double> px(sz(n * cell) * sz(n * cell));
    for (int i = 0; i < n * cell; ++i)
        for (int j = 0; j < n * cell; ++j) {
            const double v = m[i / cell][j / cell];
            px[sz(i) * sz(n * cell) + j] = std::isfinite(v) ? v : hi;
        }
    write_pgm(path, n * cell, n * cell, px, hi > 0.0 ? hi : 1.0);
}

std::string summary_text(const ExperimentConfig& cfg, const json& rep, const std::vector<std::vector<LossRecord>>& losses) {
    std::ostringstream o;
    o << "# " << version_string << " run summary\n\n";
    o << "mode " << rep.at("mode").get<std::string>() << ", seed " << cfg.seed << ", grid " << cfg.phantom.nx << "x"
      << cfg.phantom.ny << "x" << cfg.phantom.nz << "\n\n";
    o << "| slice | SER dB | cardiac err | cardiac p95 | resp err | resp p95 |\n|---|---|---|---|---|---|\n";
    const auto& ser = rep.at("ser_db");
    const auto& phase = rep.at("phase_error_rad");
    for (std::size_t z = 0; z < ser.size(); ++z) {
        o << "| " << z << " | " << (ser[z].is_number() ? fixed(ser[z].get<double>(), 2) : "inf");
        if (z < phase.size())
            o << " | " << fixed(phase[z].at("cardiac_mean").get<double>(), 3) << " | "
              << fixed(phase[z].at("cardiac_p95").get<double>(), 3) << " | "
              << fixed(phase[z].at("resp_mean").get<double>(), 3) << " | "
              << fixed(phase[z].at("resp_p95").get<double>(), 3);
        o << " |\n";
    }
    o << "\nmax latent divergence " << fixed(rep.at("max_divergence").get<double>(), 4) << "\n";
    o << "cross-excitation drop " << fixed(rep.at("cross_drop_db").get<double>(), 3) << " dB\n\n";
    o << "| model | iterations | final total | final data |\n|---|---|---|---|\n";
    for (std::size_t m = 0; m < losses.size(); ++m) {
        if (losses[m].empty()) continue;
        const auto& r = losses[m].back();
        o << "| " << m << " | " << r.iteration + 1 << " | " << sci(r.terms.total) << " | " << sci(r.terms.data) << " |\n";
    }
    return o.str();
}

void write_record(const fs::path& out, const std::string& command, const ExperimentConfig& cfg) {
    std::ostringstream o;
    o << "version " << version_string << "\ncommand " << command << "\nseed " << cfg.seed << "\nconfig\n"
      << serialize_config(cfg) << "\n";
    write_text(out / "records" / (command + ".txt"), o.str());
}

Volume3D magnitude_mosaic(const Volume3D& v) {
    const GridShape g = v.shape();
    Volume3D m({g.nx * g.nz, g.ny, 1});
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) m.at(z * g.nx + x, y, 0) = std::abs(v.at(x, y, z));
    return m;
}

// ---- commands ----

void cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
    const Simulation sim = simulate(cfg);
    save_container(out / "truth", truth_container(sim.truth));
    save_container(out / "kspace", kspace_container(sim));
    const auto inter = interleave_trajectories(cfg.sampling, cfg.phantom.nx);
    const auto binning = bin_frames(cfg.sampling.n_interleaves, cfg.sampling.spirals_per_frame,
                                    cfg.sampling.exclude_navigators, cfg.sampling.navigator_every);
    save_container(out / "trajectories", trajectory_container(inter, binning));
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
    const Simulation sim = kspace_from_container(require(out / "kspace", "simulate"));
    if (static_cast<int>(sim.kspace.size()) != cfg.phantom.nz)
        throw ConsistencyError("k-space holds " + std::to_string(sim.kspace.size()) + " slices, config has phantom.nz = " +
                               std::to_string(cfg.phantom.nz));
    fs::remove_all(out / "checkpoints");
    fs::remove_all(out / "loss");
    auto hook = [&](const TrainState& s, int m) {
        char name[32];
        std::snprintf(name, sizeof name, "iter%06ld", s.iteration);
        save_container(model_dir(out, m) / name, checkpoint_container(s, cfg.train.mode, cfg.seed));
    };
    const ModelSet models = train(cfg, sim, cfg.train.checkpoint_every > 0 ? CheckpointHook(hook) : CheckpointHook{});
    for (std::size_t m = 0; m < models.states.size(); ++m) {
        const int mi = static_cast<int>(m);
        save_container(model_dir(out, mi) / "final", checkpoint_container(models.states[m], cfg.train.mode, cfg.seed));
        write_text(out / "loss" / ("model" + std::to_string(m) + ".txt"), loss_table(models.states[m].history));
    }
}

void cmd_reconstruct(const ExperimentConfig& cfg, const fs::path& out) {
    const ModelSet models = load_models(cfg, out);
    const int src = cfg.evaluation.source_slice;
    ArrayContainer c;
    c.meta = {{"kind", "reconstruction"}, {"source_slice", std::to_string(src)}, {"mode", to_string(cfg.train.mode)}};
    const GridShape g = cfg.phantom.grid();
    const int frames = models.track_for(src).frames;
    std::vector<cdouble> cross;
    cross.reserve(sz(frames) * g.voxels());
    for (int z = 0; z < g.nz; ++z) {
        for (const Volume3D& v : decode_series(models, z, models.track_for(src)))
            cross.insert(cross.end(), v.slice(z).begin(), v.slice(z).end());
    }
    c.arrays.push_back(NamedArray::complex("cross", "z,t,y,x", {sz(g.nz), sz(frames), sz(g.ny), sz(g.nx)}, cross));
    for (int z = 0; z < g.nz; ++z) {
        const ImageSeries s = decode_series(models, z, models.track_for(z));
        std::vector<cdouble> own;
        for (const Volume3D& v : s) own.insert(own.end(), v.slice(z).begin(), v.slice(z).end());
        c.arrays.push_back(NamedArray::complex("own.slice" + std::to_string(z), "t,y,x",
                                               {s.size(), sz(g.ny), sz(g.nx)}, own));
    }
    save_container(out / "recon", c);
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
    const GroundTruth truth = truth_from_container(require(out / "truth", "simulate"));
    const ModelSet models = load_models(cfg, out);
    const ReconReport rep = evaluate(models, truth, cfg.phantom, cfg.evaluation);
    write_text(out / "evaluation" / "report.txt", rep.to_text());
    write_text(out / "evaluation" / "report.json", report_json(rep).dump(2) + "\n");
}

void cmd_export_frames(const ExperimentConfig& cfg, const fs::path& out) {
    const ArrayContainer rec = require(out / "recon", "reconstruct");
    const GroundTruth truth = truth_from_container(require(out / "truth", "simulate"));
    const NamedArray& cross = rec.get("cross");
    const GridShape g = cfg.phantom.grid();
    if (cross.shape.size() != 4 || cross.shape[0] != sz(g.nz) || cross.shape[2] != sz(g.ny) || cross.shape[3] != sz(g.nx))
        throw ConsistencyError("reconstruction grid does not match the config");
    const int frames = static_cast<int>(cross.shape[1]);
    const int src = std::stoi(rec.meta.at("source_slice"));
    const auto data = cross.to_complex();
    const fs::path dir = out / "frames";
    fs::remove_all(dir);
    double white = 0.0;
    for (auto v : data) white = std::max(white, std::abs(v));
    for (const auto& r : truth.records.at(src))
        for (auto v : r.volume.data()) white = std::max(white, std::abs(v));
    for (int t = 0; t < frames; ++t) {
        Volume3D vol(g);
        for (int z = 0; z < g.nz; ++z)
            for (std::size_t i = 0; i < g.slice_size(); ++i)
                vol.slice(z)[i] = data[(sz(z) * frames + t) * g.slice_size() + i];
        char name[48];
        std::snprintf(name, sizeof name, "cross_t%03d.pgm", t);
        const Volume3D m = magnitude_mosaic(vol);
        std::vector<double> px(m.data().size());
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.data()[i].real();
        write_pgm(dir / name, m.shape().nx, m.shape().ny, px, white);
        if (t < static_cast<int>(truth.records[src].size())) {
            const Volume3D tm = magnitude_mosaic(truth.at(src, t).volume);
            for (std::size_t i = 0; i < px.size(); ++i) px[i] = tm.data()[i].real();
            std::snprintf(name, sizeof name, "truth_t%03d.pgm", t);
            write_pgm(dir / name, tm.shape().nx, tm.shape().ny, px, white);
        }
    }
}

void cmd_report(const ExperimentConfig& cfg, const fs::path& out) {
    const fs::path rp = out / "evaluation" / "report.json";
    std::ifstream in(rp);
    if (!in) throw DependencyError("missing report " + rp.string() + " (run 'evaluate' first)");
    const json rep = json::parse(in);
    std::vector<std::vector<LossRecord>> losses;
    for (int m = 0; m < model_count(cfg); ++m)
        losses.push_back(parse_loss_table(out / "loss" / ("model" + std::to_string(m) + ".txt")));
    const fs::path dir = out / "report";
    write_text(dir / "summary.md", summary_text(cfg, rep, losses));
    plot_losses(dir / "loss.ppm", losses);
    const ModelSet models = load_models(cfg, out);
    plot_latent_timecourse(dir / "latent_timecourse.ppm", models);
    plot_latent_scatter(dir / "latent_scatter.ppm", models);
    matrix_image(dir / "divergence.pgm", rep.at("divergence").get<std::vector<std::vector<double>>>(), 16);
    std::vector<std::vector<double>> cross;
    for (const auto& row : rep.at("cross_ser_db")) {
        std::vector<double> r;
        for (const auto& v : row) r.push_back(v.is_number() ? std::max(0.0, v.get<double>()) : INFINITY);
        cross.push_back(r);
    }
    matrix_image(dir / "cross_ser.pgm", cross, 16);
}

} // namespace

Simulation simulate(const ExperimentConfig& cfg) {
    std::vector<std::string> v;
    cfg.validate(v);
    if (!v.empty()) throw ConfigError(v);
    Simulation sim;
    const auto binning = bin_frames(cfg.sampling.n_interleaves, cfg.sampling.spirals_per_frame,
                                    cfg.sampling.exclude_navigators, cfg.sampling.navigator_every);
    sim.truth = simulate_series(cfg.phantom, AcquisitionSchedule{cfg.sampling.tr_s, binning});
    sim.maps = std::make_shared<const CoilMaps>(CoilMaps::gaussian(cfg.phantom.grid(), cfg.encoding.coils));
    const auto inter = interleave_trajectories(cfg.sampling, cfg.phantom.nx);
    sim.kspace = acquire(sim.truth, sim.maps, binning, inter, cfg.sampling.tr_s, cfg.encoding.noise_sd, cfg.seed,
                         cfg.encoding.transform, cfg.encoding.gridding);
    return sim;
}

ModelSet train(const ExperimentConfig& cfg, const Simulation& sim, const CheckpointHook& hook) {
    ModelSet ms;
    ms.mode = cfg.train.mode;
    ms.states = train_models(sim.kspace, sim.maps, cfg.generator, cfg.train, hook, cfg.encoding.transform,
                             cfg.encoding.gridding);
    return ms;
}

std::string loss_table(const std::vector<LossRecord>& history) {
    std::string s = "# iteration total data kl l1 smooth\n";
    for (const auto& r : history)
        s += std::to_string(r.iteration) + " " + sci(r.terms.total) + " " + sci(r.terms.data) + " " + sci(r.terms.kl) +
             " " + sci(r.terms.l1) + " " + sci(r.terms.smooth) + "\n";
    return s;
}

void write_pgm(const fs::path& path, int width, int height, std::span<const double> pixels, double white) {
    if (width <= 0 || height <= 0 || pixels.size() != sz(width) * sz(height))
        throw ShapeError("image of " + std::to_string(pixels.size()) + " pixels is not " + std::to_string(width) + "x" +
                         std::to_string(height));
    if (!(white > 0.0)) throw ArgumentError("white level must be > 0");
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "P5\n" << width << " " << height << "\n255\n";
    for (double p : pixels) {
        const double s = std::clamp(p / white, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(255.0 * s))));
    }
    if (!out) throw Error("cannot write " + path.string());
}

void write_ppm(const fs::path& path, int width, int height, std::span<const std::uint8_t> rgb) {
    if (width <= 0 || height <= 0 || rgb.size() != 3 * sz(width) * sz(height))
        throw ShapeError("RGB buffer does not hold " + std::to_string(width) + "x" + std::to_string(height) + " pixels");
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw Error("cannot write " + path.string());
}

void run_pipeline(const std::string& command, const ExperimentConfig& cfg) {
    std::vector<std::string> v;
    cfg.validate(v);
    if (!v.empty()) throw ConfigError(v);
    const fs::path out = cfg.output_dir;
    if (command == "simulate")
        cmd_simulate(cfg, out);
    else if (command == "train")
        cmd_train(cfg, out);
    else if (command == "reconstruct")
        cmd_reconstruct(cfg, out);
    else if (command == "evaluate")
        cmd_evaluate(cfg, out);
    else if (command == "export-frames")
        cmd_export_frames(cfg, out);
    else if (command == "report")
        cmd_report(cfg, out);
    else
        throw ArgumentError("unknown command '" + command + "'");
    write_record(out, command, cfg);
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DependencyError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    return 1;
}

} // namespace vstorm
