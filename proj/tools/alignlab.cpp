// alignlab command-line front end. Config precedence: built-in defaults, then
// the JSON file given by --config, then individual flags.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "alignlab/error.hpp"
#include "alignlab/harness.hpp"
#include "alignlab/reproduce.hpp"

using namespace alignlab;

namespace {

template <typename T>
std::vector<T> split_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::istringstream parse(item);
    T value{};
    if (!(parse >> value) || !parse.eof())
      throw Error(ErrorKind::invalid_config, "cannot parse list item '" + item + "'");
    out.push_back(value);
  }
  return out;
}

struct Overrides {
  std::string config;
  ConfigOverrides values;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--rule", o.values.rule, "normal|align-zero|align-ada|fa|dfa|last-layer|readout-only");
  cmd->add_option("--width", o.values.width, "hidden units or filters");
  cmd->add_option("--lr", o.values.learning_rate, "learning rate");
  cmd->add_option("--seed", o.values.seed, "seed");
  cmd->add_option("--epochs", o.values.epochs, "epochs");
  cmd->add_option("--out", o.values.out_dir, "output directory");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  c = apply_overrides(std::move(c), o.values);
  c.validate();
  return c;
}

void print_record(const MetricsRecord& r) {
  std::printf("epoch %zu  train %.6g  test %.6g", r.epoch, r.train_loss, r.test_loss);
  if (r.test_accuracy) std::printf("  acc %.4f", *r.test_accuracy);
  if (r.alignment) {
    std::printf("  align");
    for (double s : *r.alignment) std::printf(" %.4f", s);
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alignment learning rules for wide networks"};
  app.require_subcommand(1);

  Overrides train_o;
  auto* train = app.add_subcommand("train", "train one configuration");
  add_override_flags(train, train_o);

  Overrides sweep_o;
  std::string axis, values, seeds = "0";
  auto* sweep = app.add_subcommand("sweep", "run a width or learning-rate sweep");
  add_override_flags(sweep, sweep_o);
  sweep->add_option("--axis", axis, "width|lr")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "comma-separated seeds");

  std::string run_dir;
  std::size_t probes = 0;
  auto* align = app.add_subcommand("align", "score alignment of a finished run");
  align->add_option("--run-dir", run_dir, "run directory")->required();
  align->add_option("--probes", probes, "Gaussian probes (0: dense)");

  TaskConfig gen_task;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a dataset to disk");
  gen->add_option("--task", gen_task.kind, "add|synth|glyphs")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--train-size", gen_task.train_size, "training examples");
  gen->add_option("--test-size", gen_task.test_size, "test examples");
  gen->add_option("--seed", gen_task.data_seed, "data seed");

  std::string preset, report_path, preset_out;
  bool smoke = false;
  auto* repro = app.add_subcommand("reproduce", "run a pinned preset and check it");
  repro->add_option("--preset", preset, "add-table|align-width|rule-compare")->required();
  repro->add_flag("--smoke", smoke, "add-table only: width 128, 50 epochs, ordering checks");
  repro->add_option("--report", report_path, "write the JSON report here");
  repro->add_option("--out", preset_out, "keep run directories here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunResult r = run_experiment(resolve(train_o));
      for (const auto& rec : r.records) print_record(rec);
      if (r.best_test_accuracy)
        std::printf("best test accuracy %.4f at epoch %zu\n", *r.best_test_accuracy, r.best_epoch);
      if (r.diverged) {
        std::fprintf(stderr, "diverged: %s\n", r.divergence.c_str());
        return 3;
      }
      return 0;
    }
    if (*sweep) {
      const ExperimentConfig base = resolve(sweep_o);
      const SweepResult s = run_sweep(base, axis, split_list<double>(values),
                                      split_list<std::uint64_t>(seeds), worker_threads());
      if (!base.out_dir.empty()) write_sweep_csv(std::filesystem::path(base.out_dir) / "sweep.csv", s);
      int diverged = 0;
      for (std::size_t v = 0; v < s.values.size(); ++v)
        for (const auto& r : s.runs[v]) {
          std::printf("%s=%s seed=%llu  test %.6g", axis.c_str(), format_number(s.values[v]).c_str(),
                      static_cast<unsigned long long>(r.config.seed), r.last().test_loss);
          if (r.best_test_accuracy) std::printf("  best acc %.4f", *r.best_test_accuracy);
          if (r.diverged) {
            std::printf("  DIVERGED");
            ++diverged;
          }
          std::printf("\n");
        }
      return diverged ? 3 : 0;
    }
    if (*align) {
      const auto out = align_run_dir(run_dir, probes);
      std::ofstream(std::filesystem::path(run_dir) / "alignment.json") << out.dump(2) << '\n';
      std::cout << out.dump(2) << '\n';
      return 0;
    }
    if (*gen) {
      generate_data(gen_task, gen_out);
      return 0;
    }
    if (*repro) {
      const PresetReport report = reproduce(preset, smoke, preset_out);
      for (const auto& c : report.checks)
        std::printf("%s  %s  (%s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
      if (!report_path.empty()) std::ofstream(report_path) << report.to_json().dump(2) << '\n';
      return report.passed() ? 0 : 1;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
