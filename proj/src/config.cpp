#include <fstream>
#include <sstream>

#include "json.hpp"

#include "vstorm/io.hpp"

namespace vstorm {

using nlohmann::json;

namespace {

// Reads fields out of a JSON object, recording every problem with its key path.
class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    // Returns the object at key (or null) and rejects keys outside `known`.
    const json* section(const json& parent, const std::string& path, const std::string& key,
                        std::initializer_list<const char*> known) {
        if (!parent.contains(key)) return nullptr;
        const json& j = parent.at(key);
        const std::string p = join(path, key);
        if (!j.is_object()) {
            errors_.push_back(p + ": expected an object");
            return nullptr;
        }
        check_keys(j, p, known);
        return &j;
    }

    void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> known) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            bool ok = false;
            for (const char* k : known) ok = ok || it.key() == k;
            if (!ok) errors_.push_back(join(path, it.key()) + ": unknown key");
        }
    }

    void get(const json* j, const std::string& path, const char* key, double& out) {
        if (const json* v = find(j, key)) {
            if (v->is_number())
                out = v->get<double>();
            else
                mismatch(path, key, "a number");
        }
    }
    void get(const json* j, const std::string& path, const char* key, int& out) {
        if (const json* v = find(j, key)) {
            if (v->is_number_integer())
                out = v->get<int>();
            else
                mismatch(path, key, "an integer");
        }
    }
    void get(const json* j, const std::string& path, const char* key, std::uint64_t& out) {
        if (const json* v = find(j, key)) {
            if (v->is_number_unsigned())
                out = v->get<std::uint64_t>();
            else
                mismatch(path, key, "a non-negative integer");
        }
    }
    void get(const json* j, const std::string& path, const char* key, bool& out) {
        if (const json* v = find(j, key)) {
            if (v->is_boolean())
                out = v->get<bool>();
            else
                mismatch(path, key, "a boolean");
        }
    }
    void get(const json* j, const std::string& path, const char* key, std::string& out) {
        if (const json* v = find(j, key)) {
            if (v->is_string())
                out = v->get<std::string>();
            else
                mismatch(path, key, "a string");
        }
    }
    template <typename T>
    void get(const json* j, const std::string& path, const char* key, std::vector<T>& out) {
        if (const json* v = find(j, key)) {
            bool ok = v->is_array();
            if (ok)
                for (const auto& e : *v) ok = ok && (std::is_integral_v<T> ? e.is_number_integer() : e.is_number());
            if (ok)
                out = v->get<std::vector<T>>();
            else
                mismatch(path, key, std::is_integral_v<T> ? "an array of integers" : "an array of numbers");
        }
    }
    void get(const json* j, const std::string& path, const char* key, std::array<double, 3>& out) {
        if (const json* v = find(j, key)) {
            if (v->is_array() && v->size() == 3 && (*v)[0].is_number() && (*v)[1].is_number() && (*v)[2].is_number())
                out = v->get<std::array<double, 3>>();
            else
                mismatch(path, key, "an array of 3 numbers");
        }
    }

    void error(const std::string& msg) { errors_.push_back(msg); }

private:
    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }
    static const json* find(const json* j, const char* key) {
        if (!j || !j->contains(key)) return nullptr;
        return &j->at(key);
    }
    void mismatch(const std::string& path, const char* key, const char* what) {
        errors_.push_back(join(path, key) + ": expected " + what);
    }

    std::vector<std::string>& errors_;
};

void read_ellipsoid(Reader& r, const json* parent, const std::string& path, const char* key, Ellipsoid& e) {
    if (!parent) return;
    const json* j = r.section(*parent, path, key, {"center", "radii", "intensity"});
    const std::string p = path + "." + key;
    r.get(j, p, "center", e.center);
    r.get(j, p, "radii", e.radii);
    r.get(j, p, "intensity", e.intensity);
}

json ellipsoid_json(const Ellipsoid& e) {
    return {{"center", e.center}, {"radii", e.radii}, {"intensity", e.intensity}};
}

const char* transform_name(TransformMode m) { return m == TransformMode::direct ? "direct" : "gridded"; }
const char* trajectory_name(TrajectoryKind k) { return k == TrajectoryKind::spiral ? "spiral" : "radial"; }

} // namespace

void ExperimentConfig::propagate() {
    generator.nx = phantom.nx;
    generator.ny = phantom.ny;
    generator.nz = phantom.nz;
    train.seed = seed;
}

void ExperimentConfig::validate(std::vector<std::string>& v) const {
    phantom.validate(v);
    sampling.validate(v);
    generator.validate(v);
    train.validate(v);
    evaluation.validate(v);
    if (encoding.coils < 1) v.push_back("encoding.coils: must be >= 1");
    if (encoding.noise_sd < 0.0) v.push_back("encoding.noise_sd: must be >= 0");
    if (encoding.gridding.oversampling <= 1.0) v.push_back("encoding.oversampling: must be > 1");
    if (encoding.gridding.width < 2) v.push_back("encoding.kernel_width: must be >= 2");
    if (output_dir.empty()) v.push_back("output_dir: must not be empty");

    if (encoding.coil_map_slices != phantom.nz)
        v.push_back("encoding.coil_map_slices (" + std::to_string(encoding.coil_map_slices) +
                    ") does not match phantom.nz (" + std::to_string(phantom.nz) + ")");
    if (evaluation.source_slice >= phantom.nz)
        v.push_back("evaluation.source_slice (" + std::to_string(evaluation.source_slice) +
                    ") is not below phantom.nz (" + std::to_string(phantom.nz) + ")");
    if (generator.nx != phantom.nx || generator.ny != phantom.ny || generator.nz != phantom.nz)
        v.push_back("generator grid does not follow phantom.nx/ny/nz");
    if (train.seed != seed) v.push_back("train seed does not follow the global seed");
    if (sampling.spirals_per_frame >= 1 && sampling.n_interleaves >= sampling.spirals_per_frame && train.stages >= 1 &&
        train.stages < 31) {
        const int frames = bin_frames(sampling.n_interleaves, sampling.spirals_per_frame, sampling.exclude_navigators,
                                      sampling.navigator_every)
                               .frame_count();
        if (frames / (1 << (train.stages - 1)) < 2)
            v.push_back("train.stages (" + std::to_string(train.stages) + ") leaves fewer than 2 frames from " +
                        "sampling.n_interleaves (" + std::to_string(sampling.n_interleaves) + ") in the coarsest stage");
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(origin + ": not valid JSON (" + e.what() + ")");
    }
    if (!root.is_object()) throw ConfigError(origin + ": top level must be an object");

    std::vector<std::string> err;
    Reader r(err);
    ExperimentConfig c;
    r.check_keys(root, "", {"seed", "output_dir", "phantom", "sampling", "encoding", "generator", "train", "evaluation"});
    r.get(&root, "", "seed", c.seed);
    r.get(&root, "", "output_dir", c.output_dir);

    PhantomConfig& ph = c.phantom;
    if (const json* j = r.section(root, "", "phantom",
                                  {"nx", "ny", "nz", "fov_mm", "f_cardiac", "f_resp", "slice_offsets_s",
                                   "resp_shift_vox", "contraction", "wall_motion", "edge_vox", "torso", "liver",
                                   "myocardium", "blood_pool"})) {
        const std::string p = "phantom";
        r.get(j, p, "nx", ph.nx);
        r.get(j, p, "ny", ph.ny);
        r.get(j, p, "nz", ph.nz);
        r.get(j, p, "fov_mm", ph.fov_mm);
        r.get(j, p, "f_cardiac", ph.f_cardiac);
        r.get(j, p, "f_resp", ph.f_resp);
        r.get(j, p, "slice_offsets_s", ph.slice_offsets_s);
        r.get(j, p, "resp_shift_vox", ph.resp_shift_vox);
        r.get(j, p, "contraction", ph.contraction);
        r.get(j, p, "wall_motion", ph.wall_motion);
        r.get(j, p, "edge_vox", ph.edge_vox);
        read_ellipsoid(r, j, p, "torso", ph.torso);
        read_ellipsoid(r, j, p, "liver", ph.liver);
        read_ellipsoid(r, j, p, "myocardium", ph.myocardium);
        read_ellipsoid(r, j, p, "blood_pool", ph.blood_pool);
    }

    SamplingConfig& sa = c.sampling;
    if (const json* j = r.section(root, "", "sampling",
                                  {"trajectory", "n_interleaves", "spirals_per_frame", "navigator_every",
                                   "exclude_navigators", "readout_points", "turns", "k_max", "tr_s"})) {
        const std::string p = "sampling";
        std::string kind = trajectory_name(sa.kind);
        r.get(j, p, "trajectory", kind);
        if (kind == "spiral")
            sa.kind = TrajectoryKind::spiral;
        else if (kind == "radial")
            sa.kind = TrajectoryKind::radial;
        else
            r.error("sampling.trajectory: expected \"spiral\" or \"radial\"");
        r.get(j, p, "n_interleaves", sa.n_interleaves);
        r.get(j, p, "spirals_per_frame", sa.spirals_per_frame);
        r.get(j, p, "navigator_every", sa.navigator_every);
        r.get(j, p, "exclude_navigators", sa.exclude_navigators);
        r.get(j, p, "readout_points", sa.readout_points);
        r.get(j, p, "turns", sa.turns);
        r.get(j, p, "k_max", sa.k_max);
        r.get(j, p, "tr_s", sa.tr_s);
    }

    EncodingConfig& en = c.encoding;
    if (const json* j = r.section(root, "", "encoding",
                                  {"coils", "coil_map_slices", "noise_sd", "transform", "oversampling",
                                   "kernel_width"})) {
        const std::string p = "encoding";
        r.get(j, p, "coils", en.coils);
        r.get(j, p, "coil_map_slices", en.coil_map_slices);
        r.get(j, p, "noise_sd", en.noise_sd);
        std::string t = transform_name(en.transform);
        r.get(j, p, "transform", t);
        if (t == "direct")
            en.transform = TransformMode::direct;
        else if (t == "gridded")
            en.transform = TransformMode::gridded;
        else
            r.error("encoding.transform: expected \"direct\" or \"gridded\"");
        r.get(j, p, "oversampling", en.gridding.oversampling);
        r.get(j, p, "kernel_width", en.gridding.width);
    }

    Architecture& ar = c.generator;
    if (const json* j = r.section(root, "", "generator",
                                  {"latent_dim", "base_channels", "stage_channels", "leak", "conv3d_head",
                                   "head_channels"})) {
        const std::string p = "generator";
        r.get(j, p, "latent_dim", ar.latent_dim);
        r.get(j, p, "base_channels", ar.base_channels);
        r.get(j, p, "stage_channels", ar.stage_channels);
        r.get(j, p, "leak", ar.leak);
        r.get(j, p, "conv3d_head", ar.conv3d_head);
        r.get(j, p, "head_channels", ar.head_channels);
    }

    TrainConfig& tr = c.train;
    if (const json* j = r.section(root, "", "train",
                                  {"mode", "sigma2", "lambda1", "lambda2", "relative_weights", "l1_squared", "adam",
                                   "iterations", "stages", "stage_split", "batch", "zero_epsilon", "freeze_log_std",
                                   "mu_init_sd", "log_std_init", "checkpoint_every"})) {
        const std::string p = "train";
        std::string mode = to_string(tr.mode);
        r.get(j, p, "mode", mode);
        try {
            tr.mode = parse_mode(mode);
        } catch (const ConfigError&) {
            r.error("train.mode: unknown mode \"" + mode + "\"");
        }
        r.get(j, p, "sigma2", tr.sigma2);
        r.get(j, p, "lambda1", tr.lambda1);
        r.get(j, p, "lambda2", tr.lambda2);
        r.get(j, p, "relative_weights", tr.relative_weights);
        r.get(j, p, "l1_squared", tr.l1_squared);
        if (const json* a = r.section(*j, p, "adam", {"lr", "latent_lr", "beta1", "beta2", "eps"})) {
            r.get(a, "train.adam", "lr", tr.adam.lr);
            r.get(a, "train.adam", "latent_lr", tr.adam.latent_lr);
            r.get(a, "train.adam", "beta1", tr.adam.beta1);
            r.get(a, "train.adam", "beta2", tr.adam.beta2);
            r.get(a, "train.adam", "eps", tr.adam.eps);
        }
        r.get(j, p, "iterations", tr.iterations);
        r.get(j, p, "stages", tr.stages);
        r.get(j, p, "stage_split", tr.stage_split);
        r.get(j, p, "batch", tr.batch);
        r.get(j, p, "zero_epsilon", tr.zero_epsilon);
        r.get(j, p, "freeze_log_std", tr.freeze_log_std);
        r.get(j, p, "mu_init_sd", tr.mu_init_sd);
        r.get(j, p, "log_std_init", tr.log_std_init);
        r.get(j, p, "checkpoint_every", tr.checkpoint_every);
    }

    EvaluationConfig& ev = c.evaluation;
    if (const json* j = r.section(root, "", "evaluation",
                                  {"source_slice", "dictionary_bins", "divergence_draws", "divergence_seed"})) {
        const std::string p = "evaluation";
        r.get(j, p, "source_slice", ev.source_slice);
        r.get(j, p, "dictionary_bins", ev.dictionary_bins);
        r.get(j, p, "divergence_draws", ev.divergence_draws);
        r.get(j, p, "divergence_seed", ev.divergence_seed);
    }

    c.propagate();
    if (err.empty()) c.validate(err);
    if (!err.empty()) {
        for (auto& e : err) e = origin + ": " + e;
        throw ConfigError(err);
    }
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::ostringstream s;
    s << in.rdbuf();
    return parse_config_text(s.str(), path.string());
}

std::string serialize_config(const ExperimentConfig& c) {
    const PhantomConfig& ph = c.phantom;
    const SamplingConfig& sa = c.sampling;
    const TrainConfig& tr = c.train;
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["phantom"] = {{"nx", ph.nx},
                    {"ny", ph.ny},
                    {"nz", ph.nz},
                    {"fov_mm", ph.fov_mm},
                    {"f_cardiac", ph.f_cardiac},
                    {"f_resp", ph.f_resp},
                    {"slice_offsets_s", ph.slice_offsets_s},
                    {"resp_shift_vox", ph.resp_shift_vox},
                    {"contraction", ph.contraction},
                    {"wall_motion", ph.wall_motion},
                    {"edge_vox", ph.edge_vox},
                    {"torso", ellipsoid_json(ph.torso)},
                    {"liver", ellipsoid_json(ph.liver)},
                    {"myocardium", ellipsoid_json(ph.myocardium)},
                    {"blood_pool", ellipsoid_json(ph.blood_pool)}};
    j["sampling"] = {{"trajectory", trajectory_name(sa.kind)},
                     {"n_interleaves", sa.n_interleaves},
                     {"spirals_per_frame", sa.spirals_per_frame},
                     {"navigator_every", sa.navigator_every},
                     {"exclude_navigators", sa.exclude_navigators},
                     {"readout_points", sa.readout_points},
                     {"turns", sa.turns},
                     {"k_max", sa.k_max},
                     {"tr_s", sa.tr_s}};
    j["encoding"] = {{"coils", c.encoding.coils},
                     {"coil_map_slices", c.encoding.coil_map_slices},
                     {"noise_sd", c.encoding.noise_sd},
                     {"transform", transform_name(c.encoding.transform)},
                     {"oversampling", c.encoding.gridding.oversampling},
                     {"kernel_width", c.encoding.gridding.width}};
    j["generator"] = {{"latent_dim", c.generator.latent_dim},
                      {"base_channels", c.generator.base_channels},
                      {"stage_channels", c.generator.stage_channels},
                      {"leak", c.generator.leak},
                      {"conv3d_head", c.generator.conv3d_head},
                      {"head_channels", c.generator.head_channels}};
    j["train"] = {{"mode", to_string(tr.mode)},
                  {"sigma2", tr.sigma2},
                  {"lambda1", tr.lambda1},
                  {"lambda2", tr.lambda2},
                  {"relative_weights", tr.relative_weights},
                  {"l1_squared", tr.l1_squared},
                  {"adam",
                   {{"lr", tr.adam.lr},
                    {"latent_lr", tr.adam.latent_lr},
                    {"beta1", tr.adam.beta1},
                    {"beta2", tr.adam.beta2},
                    {"eps", tr.adam.eps}}},
                  {"iterations", tr.iterations},
                  {"stages", tr.stages},
                  {"stage_split", tr.stage_split},
                  {"batch", tr.batch},
                  {"zero_epsilon", tr.zero_epsilon},
                  {"freeze_log_std", tr.freeze_log_std},
                  {"mu_init_sd", tr.mu_init_sd},
                  {"log_std_init", tr.log_std_init},
                  {"checkpoint_every", tr.checkpoint_every}};
    j["evaluation"] = {{"source_slice", c.evaluation.source_slice},
                       {"dictionary_bins", c.evaluation.dictionary_bins},
                       {"divergence_draws", c.evaluation.divergence_draws},
                       {"divergence_seed", c.evaluation.divergence_seed}};
    return j.dump(2) + "\n";
}

} // namespace vstorm
