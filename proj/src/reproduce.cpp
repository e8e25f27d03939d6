#include "alignlab/reproduce.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "alignlab/error.hpp"

namespace alignlab {

using nlohmann::json;

bool PresetReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

json PresetReport::to_json() const {
  json j;
  j["preset"] = preset;
  j["passed"] = passed();
  j["checks"] = json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  j["data"] = data;
  return j;
}

namespace {

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

std::string sub_dir(const std::string& root, const std::string& name) {
  return root.empty() ? std::string() : (std::filesystem::path(root) / name).string();
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(xs.size());
}

}  // namespace

// ---- add-table --------------------------------------------------------------------

PresetReport reproduce_add_table(const AddTableOptions& options) {
  PresetReport report;
  report.preset = "add-table";
  ExperimentConfig base;
  base.task.kind = "add";
  base.task.train_size = 300;
  base.task.test_size = 100;
  base.task.length = 100;
  base.arch.kind = "rnn";
  base.arch.activation = "relu";
  base.arch.width = options.smoke ? 128 : options.width;
  base.epochs = options.smoke ? 50 : options.epochs;
  base.learning_rate = options.learning_rate;
  base.batch_size = options.batch_size;
  base.seed = options.seed;

  std::map<std::string, double> test_loss;
  for (const char* rule : {"normal", "align-ada", "align-zero", "readout-only"}) {
    ExperimentConfig c = base;
    c.rule = rule;
    c.out_dir = sub_dir(options.out_dir, rule);
    const RunResult r = run_experiment(c);
    if (r.diverged) {
      report.checks.push_back({std::string(rule) + " trains", false, r.divergence});
      test_loss[rule] = std::numeric_limits<double>::infinity();
      continue;
    }
    test_loss[rule] = r.last().test_loss;
    report.data["runs"][rule] = {{"train_loss", r.last().train_loss},
                                 {"test_loss", r.last().test_loss}};
  }
  report.data["width"] = base.arch.width;
  report.data["epochs"] = base.epochs;
  report.data["smoke"] = options.smoke;

  const double n = test_loss["normal"], ada = test_loss["align-ada"], zero = test_loss["align-zero"],
               ro = test_loss["readout-only"];
  if (options.smoke) {
    report.checks.push_back({"normal below both align rules", n < ada && n < zero,
                             fmt("normal %.4f, align-ada %.4f, align-zero %.4f", n, ada, zero)});
    report.checks.push_back({"align rules below readout-only", std::max(ada, zero) < ro,
                             fmt("max align %.4f, readout-only %.4f", std::max(ada, zero), ro)});
  } else {
    report.checks.push_back({"normal test loss <= 0.50", n <= 0.50, fmt("normal %.4f", n)});
    report.checks.push_back({"|align-ada - normal| <= 0.15", std::abs(ada - n) <= 0.15,
                             fmt("align-ada %.4f, gap %.4f", ada, std::abs(ada - n))});
    report.checks.push_back({"|align-zero - normal| <= 0.15", std::abs(zero - n) <= 0.15,
                             fmt("align-zero %.4f, gap %.4f", zero, std::abs(zero - n))});
    report.checks.push_back({"readout-only test loss >= 1.2", ro >= 1.2, fmt("readout-only %.4f", ro)});
  }
  return report;
}

// ---- align-width ----------------------------------------------------------------

ExperimentConfig width_study_config(const WidthStudyOptions& options, std::size_t width,
                                    std::uint64_t seed, const std::string& rule) {
  ExperimentConfig c;
  c.task.kind = "synth";
  c.task.train_size = 1000;
  c.task.test_size = 200;
  c.task.input_dim = 16;
  c.task.classes = 10;
  c.task.margin = 1.0;
  c.task.data_seed = 1;
  c.arch.kind = "mlp";
  c.arch.depth = 3;
  c.arch.width = width;
  c.arch.activation = "relu";
  c.rule = rule;
  c.learning_rate = options.learning_rate;
  c.batch_size = 100;
  c.epochs = options.epochs;
  c.seed = seed;
  c.alignment.companion = rule == "normal";
  c.alignment.every = options.epochs;
  return c;
}

PresetReport reproduce_permuted_baseline(const WidthStudyOptions& options) {
  PresetReport report;
  report.preset = "align-width";
  ExperimentConfig cp = width_study_config(options, options.permuted_width, options.seeds.front(), "normal");
  cp.out_dir = sub_dir(options.out_dir, "w" + std::to_string(options.permuted_width) + "_permuted");
  const RunResult rp = run_experiment(cp);
  if (rp.diverged) throw Error(ErrorKind::non_finite, "permuted-baseline run diverged");
  const auto sigma = CorrelationOperator::sigma(*rp.companion, rp.init, rp.spec, 0);
  const double unpermuted =
      alignment_score_dense(CorrelationOperator::delta(rp.final, rp.init, 0), sigma);
  Rng rng(options.seeds.front(), 21);
  std::vector<double> permuted;
  for (std::size_t k = 0; k < options.permutations; ++k)
    permuted.push_back(permuted_baseline(rp.final, rp.init, sigma, rng));
  report.data["permuted"] = {{"width", options.permuted_width},
                             {"layer", 1},
                             {"score", unpermuted},
                             {"permuted_scores", permuted}};
  report.checks.push_back({"permuted score < 0.5x unpermuted", mean(permuted) < 0.5 * unpermuted,
                           fmt("permuted mean %.3f, unpermuted %.3f", mean(permuted), unpermuted)});
  return report;
}

PresetReport reproduce_align_width(const WidthStudyOptions& options) {
  PresetReport report;
  report.preset = "align-width";
  std::vector<double> layer1, gap;
  json per_width = json::array();
  std::vector<double> later_minus_first;

  for (std::size_t w : options.widths) {
    std::vector<double> scores, diffs;
    std::vector<std::vector<double>> layers;
    for (auto seed : options.seeds) {
      ExperimentConfig cn = width_study_config(options, w, seed, "normal");
      ExperimentConfig ca = width_study_config(options, w, seed, "align-ada");
      cn.out_dir = sub_dir(options.out_dir, "w" + std::to_string(w) + "_s" + std::to_string(seed) + "_normal");
      ca.out_dir = sub_dir(options.out_dir, "w" + std::to_string(w) + "_s" + std::to_string(seed) + "_align-ada");
      const RunResult rn = run_experiment(cn);
      const RunResult ra = run_experiment(ca);
      if (rn.diverged || ra.diverged)
        throw Error(ErrorKind::non_finite, "width study run diverged at width " + std::to_string(w));
      scores.push_back(rn.final_alignment->at(0));
      layers.push_back(*rn.final_alignment);
      const TaskData data = load_task(cn.task);
      const Matrix fn = forward(rn.spec, rn.final, data.test.inputs).output();
      const Matrix fa = forward(ra.spec, ra.final, data.test.inputs).output();
      diffs.push_back((fn - fa).colwise().norm().maxCoeff());
    }
    layer1.push_back(mean(scores));
    gap.push_back(mean(diffs));
    json lw = json::array();
    for (std::size_t l = 0; l < layers.front().size(); ++l) {
      std::vector<double> col;
      for (const auto& s : layers) col.push_back(s[l]);
      lw.push_back(mean(col));
      if (l > 0) later_minus_first.push_back(mean(col) - layer1.back());
    }
    per_width.push_back({{"width", w},
                         {"layer1_scores", scores},
                         {"layer1_mean", layer1.back()},
                         {"layer_means", lw},
                         {"max_output_gap", diffs},
                         {"max_output_gap_mean", gap.back()}});
  }
  report.data["widths"] = per_width;

  bool increasing = true;
  for (std::size_t i = 1; i < layer1.size(); ++i) increasing = increasing && layer1[i] > layer1[i - 1];
  std::string trend;
  for (double s : layer1) trend += (trend.empty() ? "" : " -> ") + fmt("%.3f", s);
  report.checks.push_back({"layer-1 alignment strictly increasing in width", increasing, trend});
  report.checks.push_back({"widest layer-1 score >= narrowest + 0.1",
                           layer1.back() >= layer1.front() + 0.1,
                           fmt("%.3f vs %.3f", layer1.back(), layer1.front())});
  report.checks.push_back({"widest output gap <= 0.5x narrowest", gap.back() <= 0.5 * gap.front(),
                           fmt("%.4f vs %.4f (ratio %.3f)", gap.back(), gap.front(),
                               gap.back() / gap.front())});
  // Logged only: later layers tend to align less than layer 1.
  report.data["later_layers_minus_layer1_mean"] = mean(later_minus_first);

  const PresetReport permuted = reproduce_permuted_baseline(options);
  report.data["permuted"] = permuted.data["permuted"];
  report.checks.insert(report.checks.end(), permuted.checks.begin(), permuted.checks.end());
  return report;
}

// ---- rule-compare -----------------------------------------------------------------

PresetReport reproduce_rule_compare(const RuleCompareOptions& options) {
  PresetReport report;
  report.preset = "rule-compare";
  ExperimentConfig base;
  base.task.kind = "idx";
  base.task.train_size = options.train_size;
  base.task.test_size = options.test_size;
  base.arch.kind = "cnn";
  base.arch.width = options.width;
  base.arch.strides = {1, 2, 2};
  base.arch.activation = "relu";
  base.batch_size = options.batch_size;
  base.epochs = options.epochs;
  base.seed = options.seed;
  if (options.learning_rates.empty())
    throw Error(ErrorKind::invalid_config, "rule-compare needs at least one learning rate");

  std::filesystem::path generated;
  if (options.train_images.empty()) {
    // Procedural glyphs, written and read back through the IDX loader.
    generated = options.out_dir.empty()
                    ? std::filesystem::temp_directory_path() / "alignlab_rule_compare_data"
                    : std::filesystem::path(options.out_dir) / "data";
    TaskConfig glyphs;
    glyphs.kind = "glyphs";
    glyphs.train_size = options.train_size;
    glyphs.test_size = options.test_size;
    glyphs.data_seed = 1;
    generate_data(glyphs, generated);
    base.task.train_images = (generated / "train-images-idx3-ubyte").string();
    base.task.train_labels = (generated / "train-labels-idx1-ubyte").string();
    base.task.test_images = (generated / "t10k-images-idx3-ubyte").string();
    base.task.test_labels = (generated / "t10k-labels-idx1-ubyte").string();
    report.data["dataset"] = "generated glyphs";
  } else {
    base.task.train_images = options.train_images;
    base.task.train_labels = options.train_labels;
    base.task.test_images = options.test_images;
    base.task.test_labels = options.test_labels;
    report.data["dataset"] = options.train_images;
  }

  std::map<std::string, double> best;
  for (const auto& rule : options.rules) {
    double acc = 0.0;
    json runs = json::array();
    for (double lr : options.learning_rates) {
      ExperimentConfig c = base;
      c.rule = rule;
      c.learning_rate = lr;
      c.out_dir = sub_dir(options.out_dir, rule + "_lr" + format_number(lr));
      const RunResult r = run_experiment(c);
      const double a = r.best_test_accuracy.value_or(0.0);
      acc = std::max(acc, a);
      runs.push_back({{"learning_rate", lr},
                      {"best_test_accuracy", a},
                      {"best_epoch", r.best_epoch},
                      {"diverged", r.diverged}});
    }
    best[rule] = acc;
    report.data["runs"][rule] = runs;
    report.checks.push_back({rule + " beats chance", acc > 0.1, fmt("best accuracy %.4f", acc)});
  }
  if (best.count("align-ada") && best.count("last-layer"))
    report.checks.push_back({"align-ada beats last-layer", best["align-ada"] > best["last-layer"],
                             fmt("%.4f vs %.4f", best["align-ada"], best["last-layer"])});
  if (options.out_dir.empty() && !generated.empty()) std::filesystem::remove_all(generated);
  return report;
}

std::vector<std::string> preset_names() { return {"add-table", "align-width", "rule-compare"}; }

PresetReport reproduce(std::string_view preset, bool smoke, const std::string& out_dir) {
  if (preset == "add-table") {
    AddTableOptions o;
    o.smoke = smoke;
    o.out_dir = out_dir;
    return reproduce_add_table(o);
  }
  if (preset == "align-width") {
    WidthStudyOptions o;
    o.out_dir = out_dir;
    return reproduce_align_width(o);
  }
  if (preset == "rule-compare") {
    RuleCompareOptions o;
    o.out_dir = out_dir;
    return reproduce_rule_compare(o);
  }
  throw Error(ErrorKind::invalid_config, "unknown preset '" + std::string(preset) + "'");
}

}  // namespace alignlab
