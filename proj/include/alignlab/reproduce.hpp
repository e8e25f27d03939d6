#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "alignlab/harness.hpp"

namespace alignlab {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct PresetReport {
  std::string preset;
  std::vector<Check> checks;
  /// Measured values backing the checks.
  nlohmann::json data = nlohmann::json::object();

  bool passed() const;
  nlohmann::json to_json() const;
};

// Add task, recurrent net: normal / align-ada / align-zero / readout-only.
struct AddTableOptions {
  std::size_t width = 512;
  std::size_t epochs = 200;
  double learning_rate = 0.001;
  std::size_t batch_size = 50;
  std::uint64_t seed = 0;
  /// Width 128, 50 epochs, ordering checks only.
  bool smoke = false;
  std::string out_dir;
};
PresetReport reproduce_add_table(const AddTableOptions& options);

// Synthetic 10-class task, depth-3 relu MLP, alignment and equivalence vs width.
struct WidthStudyOptions {
  std::vector<std::size_t> widths{32, 128, 512};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t permuted_width = 256;
  std::size_t permutations = 10;
  double learning_rate = 0.5;
  std::size_t epochs = 10;
  std::string out_dir;
};
/// The pinned feedforward configuration of the width study.
ExperimentConfig width_study_config(const WidthStudyOptions& options, std::size_t width,
                                    std::uint64_t seed, const std::string& rule);
PresetReport reproduce_align_width(const WidthStudyOptions& options);
/// Layer-1 score at permuted_width (first seed) against shuffled weight changes.
PresetReport reproduce_permuted_baseline(const WidthStudyOptions& options);

// Image classification with a small CNN under every feedforward rule. Each rule
// runs once per learning rate; its best test accuracy over rates and epochs counts.
struct RuleCompareOptions {
  std::size_t train_size = 10000;
  std::size_t test_size = 2000;
  std::size_t width = 8;
  std::size_t epochs = 10;
  std::vector<double> learning_rates{0.25, 0.5, 1.0};
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  std::vector<std::string> rules{"normal", "align-ada", "align-zero", "last-layer", "fa", "dfa"};
  /// IDX files to use instead of generated glyph images (all four or none).
  std::string train_images, train_labels, test_images, test_labels;
  std::string out_dir;
};
PresetReport reproduce_rule_compare(const RuleCompareOptions& options);

std::vector<std::string> preset_names();
/// Runs a preset with its pinned options; unknown names throw invalid_config.
PresetReport reproduce(std::string_view preset, bool smoke, const std::string& out_dir);

}  // namespace alignlab
