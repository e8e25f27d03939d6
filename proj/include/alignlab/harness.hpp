#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "alignlab/alignment.hpp"
#include "alignlab/network.hpp"
#include "alignlab/rnn.hpp"
#include "alignlab/rules.hpp"
#include "alignlab/tasks.hpp"

namespace alignlab {

struct TaskConfig {
  /// add | synth | glyphs | idx
  std::string kind = "synth";
  std::size_t train_size = 1000;
  std::size_t test_size = 200;
  std::uint64_t data_seed = 1;
  // synth
  std::size_t input_dim = 16;
  std::size_t classes = 10;
  double margin = 1.0;
  // add
  std::size_t length = 100;
  double bernoulli = 0.5;
  // idx; sizes of 0 load everything
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  bool operator==(const TaskConfig&) const = default;
};

struct ArchConfig {
  /// mlp | cnn | rnn
  std::string kind = "mlp";
  /// Hidden units (mlp, rnn) or filters per conv layer (cnn).
  std::size_t width = 64;
  /// Weight layers including the output layer (mlp); ignored otherwise.
  std::size_t depth = 3;
  /// One stride per conv layer (cnn).
  std::vector<std::size_t> strides{1, 2, 2};
  std::string activation = "relu";

  bool operator==(const ArchConfig&) const = default;
};

struct AlignConfig {
  bool companion = false;
  /// 1-based layer numbers; empty means every layer.
  std::vector<std::size_t> layers;
  /// 0: dense score when every operator fits the dense cap, else 1000 probes.
  std::size_t probes = 0;
  /// Measure every this many epochs (and after the last one).
  std::size_t every = 10;

  bool operator==(const AlignConfig&) const = default;
};

struct ExperimentConfig {
  TaskConfig task;
  ArchConfig arch;
  std::string rule = "normal";
  double learning_rate = 1.0;
  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  AlignConfig alignment;
  /// auto | cached | recompute
  std::string snapshot = "auto";
  /// Recurrent align rules: max j - i, 0 for the whole sequence.
  std::size_t window = 0;
  std::string out_dir;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Rejects unknown keys at every level; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Command-line values that take precedence over the config file.
struct ConfigOverrides {
  std::optional<std::string> rule;
  std::optional<std::size_t> width;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> out_dir;
};
ExperimentConfig apply_overrides(ExperimentConfig config, const ConfigOverrides& overrides);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

struct TaskData {
  ClassificationSet train;
  ClassificationSet test;
  AddTaskSet sequences;
  bool sequential = false;
};

TaskData load_task(const TaskConfig& task);
NetworkSpec build_network(const ExperimentConfig& config, const TaskData& data);
RnnSpec build_rnn(const ExperimentConfig& config);

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::string rule;
  std::size_t width = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  std::optional<double> test_accuracy;
  /// Per configured layer; NaN where the score is undefined.
  std::optional<std::vector<double>> alignment;
  long long wall_time_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,rule,width,lr,seed,train_loss,test_loss,test_accuracy,alignment,wall_time_ms";

std::string format_number(double value);
std::string to_csv_row(const MetricsRecord& record);

struct RunResult {
  ExperimentConfig config;
  std::vector<MetricsRecord> records;
  bool diverged = false;
  std::string divergence;
  std::optional<double> best_test_accuracy;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> alignment_layers;
  std::optional<std::vector<double>> final_alignment;

  NetworkSpec spec;
  ParamSet init;
  ParamSet final;
  std::optional<CompanionState> companion;

  RnnSpec rnn_spec;
  RnnParams rnn_init;
  RnnParams rnn_final;

  const MetricsRecord& last() const { return records.back(); }
};

/// Trains per config. When out_dir is set, writes metrics.csv (incrementally,
/// with a '#' footer row), summary.json, config.json and the parameter bundle.
/// Divergence stops training and is reported in the result, not thrown.
RunResult run_experiment(const ExperimentConfig& config);

/// Scores for the layers in `layers` (0-based): dense when `probes` is 0 and
/// the operator fits the cap, stochastic otherwise. NaN for undefined scores.
std::vector<double> measure_alignment(const ParamSet& current, const ParamSet& init,
                                      const CompanionState& companion, const NetworkSpec& spec,
                                      const std::vector<std::size_t>& layers, std::size_t probes,
                                      Rng& rng);

/// Recomputes alignment from a finished run directory.
nlohmann::json align_run_dir(const std::filesystem::path& run_dir, std::size_t probes);

struct SweepResult {
  std::string axis;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  /// runs[v][s]
  std::vector<std::vector<RunResult>> runs;
};

/// One run per (value, seed); runs execute on up to `threads` workers and are
/// stored by position, so the output does not depend on scheduling.
SweepResult run_sweep(const ExperimentConfig& base, const std::string& axis,
                      const std::vector<double>& values, const std::vector<std::uint64_t>& seeds,
                      std::size_t threads);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep);

/// ALIGNLAB_THREADS, default 1.
std::size_t worker_threads();

/// Writes datasets for `task` under `out`: add -> add_{train,test}.{bin,json},
/// synth -> synth_{train,test}.{bin,json}, glyphs -> IDX image/label pairs.
void generate_data(const TaskConfig& task, const std::filesystem::path& out);

}  // namespace alignlab
