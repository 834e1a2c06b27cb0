#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vstorm/encoding.hpp"
#include "vstorm/evaluation.hpp"
#include "vstorm/generator.hpp"
#include "vstorm/phantom.hpp"
#include "vstorm/sampling.hpp"
#include "vstorm/training.hpp"

namespace vstorm {

inline constexpr const char* version_string = "vstorm 0.3.0";

struct EncodingConfig {
    int coils = 4;
    /// Slices covered by the coil maps; must equal phantom.nz.
    int coil_map_slices = 4;
    double noise_sd = 0.0;
    TransformMode transform = TransformMode::gridded;
    GriddingParams gridding;
    bool operator==(const EncodingConfig&) const = default;
};

struct ExperimentConfig {
    PhantomConfig phantom;
    SamplingConfig sampling;
    EncodingConfig encoding;
    /// Grid fields (nx, ny, nz) follow the phantom and are not read from the file.
    Architecture generator;
    TrainConfig train;
    EvaluationConfig evaluation;
    std::string output_dir = "run";
    std::uint64_t seed = 1;

    /// Copies the global seed and the phantom grid into the sections that use them.
    void propagate();
    void validate(std::vector<std::string>& violations) const;
    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses JSON text. Unknown keys, type mismatches and inconsistent
/// sections are all collected into one ConfigError.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

enum class DType { float32, complex64 };

/// One array of a container. Values are kept as float32 (complex64 as
/// interleaved real/imag pairs).
struct NamedArray {
    std::string name;
    DType dtype = DType::float32;
    std::string axes;
    std::vector<std::size_t> shape;
    std::vector<float> values;

    std::size_t elements() const;
    std::size_t bytes() const { return values.size() * sizeof(float); }

    static NamedArray real(std::string name, std::string axes, std::vector<std::size_t> shape,
                           std::span<const double> v);
    static NamedArray complex(std::string name, std::string axes, std::vector<std::size_t> shape,
                              std::span<const cdouble> v);
    std::vector<double> to_real() const;
    std::vector<cdouble> to_complex() const;
};

struct ArrayContainer {
    std::map<std::string, std::string> meta;
    std::vector<NamedArray> arrays;

    const NamedArray& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

/// Directory with manifest.txt and one little-endian .raw file per array.
void save_container(const std::filesystem::path& dir, const ArrayContainer& c);
ArrayContainer load_container(const std::filesystem::path& dir);
bool container_exists(const std::filesystem::path& dir);

ArrayContainer checkpoint_container(const TrainState& state, TrainMode mode, std::uint64_t seed);
/// Parameters and latents back from a checkpoint (optimizer state is not stored).
TrainState state_from_checkpoint(const ArrayContainer& c);

/// Simulated acquisition held in memory.
struct Simulation {
    GroundTruth truth;
    std::shared_ptr<const CoilMaps> maps;
    std::vector<KTSlice> kspace;
};

Simulation simulate(const ExperimentConfig& cfg);
ModelSet train(const ExperimentConfig& cfg, const Simulation& sim, const CheckpointHook& hook = {});

/// Loss history as a whitespace table: iteration total data kl l1 smooth.
std::string loss_table(const std::vector<LossRecord>& history);

/// 8-bit grayscale PGM; values are scaled so `white` maps to 255.
void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const double> pixels,
               double white);
/// 8-bit RGB PPM, pixels as r,g,b triples.
void write_ppm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> rgb);

/// Runs one pipeline stage below cfg.output_dir. Throws ConfigError,
/// DependencyError or NumericError; `exit_code` maps them.
void run_pipeline(const std::string& command, const ExperimentConfig& cfg);
int exit_code(const std::exception& e);

} // namespace vstorm
