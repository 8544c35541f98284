#pragma once

// Experiment orchestration: configuration, shared datasets, the
// attack x defense matrix, the ablation arms and single-weight sweeps.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "cvdl/attacks.hpp"
#include "cvdl/evaluation.hpp"
#include "cvdl/training.hpp"

namespace cvdl {

struct DataConfig {
  std::size_t n_train = 2000;
  std::uint64_t seed = 1;
  int image_size = 32;
};

struct EvalConfig {
  std::size_t n_test = 300;
  int max_len = kDefaultMaxLen;
};

struct OutputConfig {
  std::filesystem::path dir = "runs";
  std::string tag = "tiny-captioner";
  bool checkpoints = true;
};

struct ExperimentConfig {
  DataConfig data;
  PoisonConfig poison;
  TrainConfig train;
  EvalConfig eval;
  OutputConfig output;
  int threads = 0;  // 0: OpenMP default

  void validate() const;
};

// Experiment defaults. The BadNets patch sits at the image center (rows and
// columns 14..17 on 32 x 32) so that patch perturbations can reach it.
ExperimentConfig default_experiment_config();

nlohmann::ordered_json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are an error.
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Dotted keys ("train.lr", ...) of every scalar setting, in file order.
std::vector<std::string> config_keys();
// Sets one dotted key from its textual value (JSON literal or bare string).
void apply_override(nlohmann::ordered_json& j, const std::string& key, const std::string& value);
// Sets every seed of the data, poison and training sections.
void set_master_seed(ExperimentConfig& c, std::uint64_t seed);

// key=value lines of the flattened resolved config.
std::string manifest_text(const ExperimentConfig& c);

struct ExperimentData {
  Dataset train_clean;
  Dataset test_clean;
};

ExperimentData build_data(const ExperimentConfig& c);

struct ArmSpec {
  std::string model;   // row tag
  std::string attack;  // "Clean" or an attack name
  bool poisoned = true;
  bool defense = false;
  LossWeights weights;
  std::string dir;  // subdirectory under output.dir
};

// Trains one arm on `train_set` and evaluates it; writes runlog.jsonl and,
// if enabled, checkpoint.bin into the arm directory.
MetricsRow run_arm(const ExperimentConfig& c, const ArmSpec& arm, const Dataset& train_set, const Dataset& test_clean,
                   const Dataset& test_triggered);

// Rows are flushed to output.dir/metrics.csv after every arm.
std::vector<MetricsRow> run_matrix(const ExperimentConfig& c, const std::vector<AttackKind>& attacks);

enum class AblationArm { no_defense, patch_only, patch_cvdis, full };
std::string_view to_string(AblationArm a);
LossWeights ablation_weights(AblationArm a, const LossWeights& defaults);

std::vector<MetricsRow> run_ablation(const ExperimentConfig& c);

// which: 1, 2 or 3 selects the weight being swept.
std::vector<MetricsRow> run_sweep(const ExperimentConfig& c, int which, const std::vector<double>& values);

inline const std::vector<double> kDefaultSweepGrid = {0.0, 0.1, 0.25, 0.5, 1.0, 2.0};

// Writes manifest.txt and config.json into output.dir.
void write_manifest(const ExperimentConfig& c);

}  // namespace cvdl
