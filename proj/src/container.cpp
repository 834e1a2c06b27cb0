#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vstorm/io.hpp"

namespace vstorm {

namespace fs = std::filesystem;

namespace {

constexpr const char* manifest_name = "manifest.txt";
constexpr const char* manifest_magic = "vstorm-container 1";

const char* dtype_name(DType t) { return t == DType::float32 ? "float32" : "complex64"; }

std::string shape_text(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return "-";
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s;
}

std::vector<std::size_t> parse_shape(const std::string& s) {
    std::vector<std::size_t> out;
    if (s == "-") return out;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(std::stoull(part));
    return out;
}

bool valid_token(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '/') return false;
    return true;
}

void write_floats(const fs::path& path, const std::vector<float>& v) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    } else {
        for (float f : v) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
            out.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
    if (!out) throw Error("short write to " + path.string());
}

} // namespace

std::size_t NamedArray::elements() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

NamedArray NamedArray::real(std::string name, std::string axes, std::vector<std::size_t> shape,
                            std::span<const double> v) {
    NamedArray a{std::move(name), DType::float32, std::move(axes), std::move(shape), {}};
    if (a.elements() != v.size()) throw ShapeError("array " + a.name + ": shape does not match data");
    a.values.assign(v.begin(), v.end());
    return a;
}

NamedArray NamedArray::complex(std::string name, std::string axes, std::vector<std::size_t> shape,
                               std::span<const cdouble> v) {
    NamedArray a{std::move(name), DType::complex64, std::move(axes), std::move(shape), {}};
    if (a.elements() != v.size()) throw ShapeError("array " + a.name + ": shape does not match data");
    a.values.reserve(2 * v.size());
    for (auto x : v) {
        a.values.push_back(static_cast<float>(x.real()));
        a.values.push_back(static_cast<float>(x.imag()));
    }
    return a;
}

std::vector<double> NamedArray::to_real() const {
    if (dtype != DType::float32) throw ShapeError("array " + name + " is not float32");
    return {values.begin(), values.end()};
}

std::vector<cdouble> NamedArray::to_complex() const {
    if (dtype != DType::complex64) throw ShapeError("array " + name + " is not complex64");
    std::vector<cdouble> out(values.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {values[2 * i], values[2 * i + 1]};
    return out;
}

const NamedArray& ArrayContainer::get(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw ConsistencyError("container has no array '" + name + "'");
}

bool ArrayContainer::has(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return true;
    return false;
}

void save_container(const fs::path& dir, const ArrayContainer& c) {
    fs::create_directories(dir);
    std::ostringstream m;
    m << manifest_magic << "\n";
    for (const auto& [k, v] : c.meta) {
        if (!valid_token(k) || v.find('\n') != std::string::npos) throw ArgumentError("bad metadata entry '" + k + "'");
        m << "meta " << k << " " << v << "\n";
    }
    for (const auto& a : c.arrays) {
        if (!valid_token(a.name)) throw ArgumentError("array name '" + a.name + "' is not a valid file token");
        const std::size_t expect = a.elements() * (a.dtype == DType::complex64 ? 2 : 1);
        if (a.values.size() != expect) throw ShapeError("array " + a.name + ": shape does not match data");
        const std::string file = a.name + ".raw";
        write_floats(dir / file, a.values);
        m << "array " << a.name << " " << dtype_name(a.dtype) << " little-endian " << (a.axes.empty() ? "-" : a.axes)
          << " " << shape_text(a.shape) << " " << a.bytes() << " " << file << "\n";
    }
    std::ofstream out(dir / manifest_name, std::ios::trunc);
    out << m.str();
    if (!out) throw Error("cannot write manifest in " + dir.string());
}

bool container_exists(const fs::path& dir) { return fs::is_regular_file(dir / manifest_name); }

ArrayContainer load_container(const fs::path& dir) {
    std::ifstream in(dir / manifest_name);
    if (!in) throw DependencyError("missing container " + dir.string());
    std::string line;
    if (!std::getline(in, line) || line != manifest_magic)
        throw CorruptionError(dir.string() + ": manifest header is not '" + manifest_magic + "'");
    ArrayContainer c;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "meta") {
            std::string key, value;
            ls >> key;
            std::getline(ls >> std::ws, value);
            c.meta[key] = value;
            continue;
        }
        if (kind != "array") throw CorruptionError(dir.string() + ": unrecognised manifest line '" + line + "'");
        NamedArray a;
        std::string dtype, order, axes, shape, file;
        std::size_t bytes = 0;
        if (!(ls >> a.name >> dtype >> order >> axes >> shape >> bytes >> file))
            throw CorruptionError(dir.string() + ": malformed manifest line '" + line + "'");
        if (dtype == "float32")
            a.dtype = DType::float32;
        else if (dtype == "complex64")
            a.dtype = DType::complex64;
        else
            throw CorruptionError("array " + a.name + ": unknown element type " + dtype);
        if (order != "little-endian") throw CorruptionError("array " + a.name + ": unsupported byte order " + order);
        a.axes = axes == "-" ? "" : axes;
        try {
            a.shape = parse_shape(shape);
        } catch (const std::exception&) {
            throw CorruptionError("array " + a.name + ": bad shape " + shape);
        }
        const std::size_t floats = a.elements() * (a.dtype == DType::complex64 ? 2 : 1);
        if (bytes != floats * sizeof(float))
            throw CorruptionError("array " + a.name + ": manifest byte count disagrees with its shape");
        const fs::path path = dir / file;
        std::error_code ec;
        const auto size = fs::file_size(path, ec);
        if (ec || size != bytes)
            throw CorruptionError("array " + a.name + ": file " + path.string() + " has " +
                                  (ec ? std::string("no readable size") : std::to_string(size) + " bytes") +
                                  ", manifest says " + std::to_string(bytes));
        a.values.resize(floats);
        std::ifstream raw(path, std::ios::binary);
        raw.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(bytes));
        if (!raw) throw CorruptionError("array " + a.name + ": short read from " + path.string());
        if constexpr (std::endian::native != std::endian::little) {
            for (auto& f : a.values) {
                auto u = std::bit_cast<std::uint32_t>(f);
                u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
                f = std::bit_cast<float>(u);
            }
        }
        c.arrays.push_back(std::move(a));
    }
    return c;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? "-" : s;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    if (s == "-") return out;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(std::stoi(part));
    return out;
}

std::string exact(double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

const std::string& meta(const ArrayContainer& c, const std::string& key) {
    auto it = c.meta.find(key);
    if (it == c.meta.end()) throw CorruptionError("checkpoint is missing metadata '" + key + "'");
    return it->second;
}

} // namespace

ArrayContainer checkpoint_container(const TrainState& s, TrainMode mode, std::uint64_t seed) {
    ArrayContainer c;
    const Architecture& a = s.params.arch;
    c.meta = {{"kind", "checkpoint"},
              {"mode", to_string(mode)},
              {"seed", std::to_string(seed)},
              {"iteration", std::to_string(s.iteration)},
              {"latent_dim", std::to_string(a.latent_dim)},
              {"nx", std::to_string(a.nx)},
              {"ny", std::to_string(a.ny)},
              {"nz", std::to_string(a.nz)},
              {"base_channels", std::to_string(a.base_channels)},
              {"stage_channels", join_ints(a.stage_channels)},
              {"leak", exact(a.leak)},
              {"conv3d_head", a.conv3d_head ? "1" : "0"},
              {"head_channels", std::to_string(a.head_channels)},
              {"tracks", std::to_string(s.latents.tracks.size())}};
    for (const auto& t : s.params.tensors) {
        std::vector<std::size_t> shape(t.shape.begin(), t.shape.end());
        const std::string axes = t.shape.size() == 1 ? "out" : t.shape.size() == 2 ? "out,in" : "out,in,kernel";
        c.arrays.push_back(NamedArray::real(t.name, axes, shape,
                                            std::span<const double>(s.params.values).subspan(t.offset, t.size)));
    }
    for (std::size_t k = 0; k < s.latents.tracks.size(); ++k) {
        const LatentTrack& tr = s.latents.tracks[k];
        const std::vector<std::size_t> shape{static_cast<std::size_t>(tr.frames), static_cast<std::size_t>(tr.dim)};
        c.arrays.push_back(NamedArray::real("mu.track" + std::to_string(k), "t,latent", shape, tr.mu));
        c.arrays.push_back(NamedArray::real("log_std.track" + std::to_string(k), "t,latent", shape, tr.log_std));
    }
    return c;
}

TrainState state_from_checkpoint(const ArrayContainer& c) {
    if (meta(c, "kind") != "checkpoint") throw CorruptionError("container is not a checkpoint");
    Architecture a;
    try {
        a.latent_dim = std::stoi(meta(c, "latent_dim"));
        a.nx = std::stoi(meta(c, "nx"));
        a.ny = std::stoi(meta(c, "ny"));
        a.nz = std::stoi(meta(c, "nz"));
        a.base_channels = std::stoi(meta(c, "base_channels"));
        a.stage_channels = split_ints(meta(c, "stage_channels"));
        a.leak = std::stod(meta(c, "leak"));
        a.conv3d_head = meta(c, "conv3d_head") == "1";
        a.head_channels = std::stoi(meta(c, "head_channels"));
    } catch (const std::invalid_argument&) {
        throw CorruptionError("checkpoint metadata is not numeric");
    }
    TrainState s;
    s.params = empty_params(a);
    for (const auto& t : s.params.tensors) {
        const auto v = c.get(t.name).to_real();
        if (v.size() != t.size) throw CorruptionError("array " + t.name + ": size does not match the architecture");
        std::copy(v.begin(), v.end(), s.params.values.begin() + static_cast<std::ptrdiff_t>(t.offset));
    }
    s.iteration = std::stol(meta(c, "iteration"));
    s.latents.dim = a.latent_dim;
    const int tracks = std::stoi(meta(c, "tracks"));
    for (int k = 0; k < tracks; ++k) {
        const NamedArray& mu = c.get("mu.track" + std::to_string(k));
        const NamedArray& ls = c.get("log_std.track" + std::to_string(k));
        if (mu.shape.size() != 2 || mu.shape[1] != static_cast<std::size_t>(a.latent_dim) || ls.shape != mu.shape)
            throw CorruptionError("array mu.track" + std::to_string(k) + ": unexpected shape");
        LatentTrack tr;
        tr.frames = static_cast<int>(mu.shape[0]);
        tr.dim = a.latent_dim;
        tr.mu = mu.to_real();
        tr.log_std = ls.to_real();
        s.latents.tracks.push_back(std::move(tr));
    }
    s.mu_opt.resize(tracks);
    s.log_std_opt.resize(tracks);
    return s;
}

} // namespace vstorm
