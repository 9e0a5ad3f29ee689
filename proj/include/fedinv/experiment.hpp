#ifndef FEDINV_EXPERIMENT_HPP
#define FEDINV_EXPERIMENT_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedinv/attack.hpp"
#include "fedinv/defense.hpp"
#include "fedinv/federation.hpp"
#include "fedinv/metrics.hpp"

namespace fedinv {

class ConfigError : public Error {
public:
    using Error::Error;
};

struct DataConfig {
    std::string source = "synth";  // synth | dir
    std::string path;              // required for dir
    std::string synth_kind = "blobs";
    int synth_samples = 16;
    int classes = 4;  // synth only; dir derives classes from subdirectories
    int image_size = 32;
    std::string stats = "auto";  // auto | explicit
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

struct ModelConfig {
    std::string kind = "cnn4";  // cnn4 | mlp | rescnn
    int hidden = 36;            // mlp only
    std::string init = "uniform";
    double init_bound = 0.5;
};

struct FederationSection {
    int clients = 1;
    int clients_per_round = 1;
    double learning_rate = 0.1;
    int rounds = 0;        // rounds simulated and logged
    int local_epochs = 1;
    int attack_round = 0;  // parameters the attacker targets; <= rounds
};

struct DefenseSection {
    std::string mechanism = "none";
    std::vector<double> noise_levels{0.0};
    double noise_unit = 1e-4;
    double keep_ratio = 1.0;
};

struct AttackSection {
    std::vector<std::string> methods{"dlg"};
    int samples = 4;
    int max_iterations = 0;          // 0 keeps the per-method preset
    std::string label_mode = "preset";  // preset | optimize | infer | known
    double tv_weight = -1.0;         // negative keeps the preset
    int restarts = 1;
    int snapshot_stride = 0;
};

struct OutputSection {
    std::string directory = "out";
    std::uint64_t seed = 42;
    int threads = 1;
    bool save_images = true;
};

struct ExperimentConfig {
    int schema_version = 1;
    DataConfig data;
    ModelConfig model;
    FederationSection federation;
    DefenseSection defense;
    AttackSection attack;
    OutputSection output;
};

/// Parses the sectioned key=value format. schema_version is mandatory and
/// pinned to 1; unknown sections or keys are hard errors carrying the line
/// number. Values are validated (enums, ranges, list shapes) here.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::filesystem::path& path);

/// Canonical text form; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// One attack run inside the sweep.
struct SampleRecord {
    std::string method;
    double noise_level = 0.0;
    int sample_pos = 0;      // position within the attacked subset
    int dataset_index = 0;   // index into the prepared dataset
    std::string source_id;
    int label_true = -1;
    int label_attack = -1;
    std::uint64_t seed = 0;
    int iterations = 0;
    std::string stop_reason;
    double final_objective = 0.0;
    double best_objective = 0.0;
    double ssim_value = 0.0;
    double mse_value = 0.0;
    bool success = false;
    double wall_seconds = 0.0;
    std::string error;  // non-empty when the attack failed outright
};

struct CellSummary {
    std::string method;
    double noise_level = 0.0;
    SuccessSummary stats;
    double mean_seconds = 0.0;
};

struct ExperimentResult {
    std::filesystem::path output_dir;
    std::vector<SampleRecord> records;
    std::vector<CellSummary> summary;
    std::vector<RoundRecord> rounds;
};

struct RunOverrides {
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
};

/// Environment variable consulted for the output directory (lowest
/// precedence is the config, highest the explicit override).
extern const char* kOutputDirEnvVar;

/// Prepared dataset: raw images at model resolution plus their normalized
/// training examples.
struct PreparedData {
    std::vector<ImageSample> raw;
    std::vector<Example> examples;
    DatasetStats stats;
    int classes = 0;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);
ModelSpec make_model(const ExperimentConfig& config, int classes);

/// Method preset merged with the [attack] section overrides.
AttackConfig make_attack_config(const ExperimentConfig& config, AttackMethod method,
                                std::uint64_t seed, int victim_label);

/// Runs the full sweep: federation warm-up, per-cell attacks, metric
/// summaries, and the summary.csv / records.jsonl / rounds.csv / images/
/// output tree.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOverrides& overrides = {});

}  // namespace fedinv

#endif
