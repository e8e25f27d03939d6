#include "alignlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "alignlab/error.hpp"
#include "alignlab/io.hpp"

namespace alignlab {

using nlohmann::json;

// ---- config -------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::invalid_config, where + " must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!keys.count(item.key()))
      throw Error(ErrorKind::invalid_config, "unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::invalid_config, where + "." + key + " has the wrong type");
  }
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  j = json{
      {"task",
       {{"kind", c.task.kind},
        {"train_size", c.task.train_size},
        {"test_size", c.task.test_size},
        {"data_seed", c.task.data_seed},
        {"input_dim", c.task.input_dim},
        {"classes", c.task.classes},
        {"margin", c.task.margin},
        {"length", c.task.length},
        {"bernoulli", c.task.bernoulli},
        {"train_images", c.task.train_images},
        {"train_labels", c.task.train_labels},
        {"test_images", c.task.test_images},
        {"test_labels", c.task.test_labels}}},
      {"arch",
       {{"kind", c.arch.kind},
        {"width", c.arch.width},
        {"depth", c.arch.depth},
        {"strides", c.arch.strides},
        {"activation", c.arch.activation}}},
      {"rule", c.rule},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"alignment",
       {{"companion", c.alignment.companion},
        {"layers", c.alignment.layers},
        {"probes", c.alignment.probes},
        {"every", c.alignment.every}}},
      {"snapshot", c.snapshot},
      {"window", c.window},
      {"out_dir", c.out_dir},
  };
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j,
                 {"task", "arch", "rule", "learning_rate", "batch_size", "epochs", "seed",
                  "alignment", "snapshot", "window", "out_dir"},
                 "config");
  if (j.contains("task")) {
    const json& t = j.at("task");
    reject_unknown(t,
                   {"kind", "train_size", "test_size", "data_seed", "input_dim", "classes",
                    "margin", "length", "bernoulli", "train_images", "train_labels",
                    "test_images", "test_labels"},
                   "task");
    read_key(t, "kind", c.task.kind, "task");
    read_key(t, "train_size", c.task.train_size, "task");
    read_key(t, "test_size", c.task.test_size, "task");
    read_key(t, "data_seed", c.task.data_seed, "task");
    read_key(t, "input_dim", c.task.input_dim, "task");
    read_key(t, "classes", c.task.classes, "task");
    read_key(t, "margin", c.task.margin, "task");
    read_key(t, "length", c.task.length, "task");
    read_key(t, "bernoulli", c.task.bernoulli, "task");
    read_key(t, "train_images", c.task.train_images, "task");
    read_key(t, "train_labels", c.task.train_labels, "task");
    read_key(t, "test_images", c.task.test_images, "task");
    read_key(t, "test_labels", c.task.test_labels, "task");
  }
  if (j.contains("arch")) {
    const json& a = j.at("arch");
    reject_unknown(a, {"kind", "width", "depth", "strides", "activation"}, "arch");
    read_key(a, "kind", c.arch.kind, "arch");
    read_key(a, "width", c.arch.width, "arch");
    read_key(a, "depth", c.arch.depth, "arch");
    read_key(a, "strides", c.arch.strides, "arch");
    read_key(a, "activation", c.arch.activation, "arch");
  }
  if (j.contains("alignment")) {
    const json& a = j.at("alignment");
    reject_unknown(a, {"companion", "layers", "probes", "every"}, "alignment");
    read_key(a, "companion", c.alignment.companion, "alignment");
    read_key(a, "layers", c.alignment.layers, "alignment");
    read_key(a, "probes", c.alignment.probes, "alignment");
    read_key(a, "every", c.alignment.every, "alignment");
  }
  read_key(j, "rule", c.rule, "config");
  read_key(j, "learning_rate", c.learning_rate, "config");
  read_key(j, "batch_size", c.batch_size, "config");
  read_key(j, "epochs", c.epochs, "config");
  read_key(j, "seed", c.seed, "config");
  read_key(j, "snapshot", c.snapshot, "config");
  read_key(j, "window", c.window, "config");
  read_key(j, "out_dir", c.out_dir, "config");
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::invalid_config, msg); };
  const std::set<std::string> tasks{"add", "synth", "glyphs", "idx"};
  const std::set<std::string> archs{"mlp", "cnn", "rnn"};
  if (!tasks.count(task.kind)) fail("unknown task kind '" + task.kind + "'");
  if (!archs.count(arch.kind)) fail("unknown arch kind '" + arch.kind + "'");
  if ((arch.kind == "rnn") != (task.kind == "add")) fail("the add task pairs with the rnn arch");
  if (arch.kind == "cnn" && task.kind == "synth") fail("cnn needs an image task");
  if (arch.width == 0) fail("arch.width must be positive");
  if (arch.kind == "mlp" && arch.depth == 0) fail("arch.depth must be positive");
  if (arch.kind == "cnn" && arch.strides.empty()) fail("arch.strides must be nonempty");
  try {
    parse_activation(arch.activation);
    const RuleKind r = parse_rule(rule);
    if (arch.kind == "rnn" && (r == RuleKind::fa || r == RuleKind::dfa))
      fail("fa and dfa are not defined for recurrent networks");
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::invalid_config) throw;
    fail(e.what());
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (snapshot != "auto" && snapshot != "cached" && snapshot != "recompute")
    fail("snapshot must be auto, cached or recompute");
  if (alignment.companion && arch.kind == "rnn")
    fail("alignment tracking is only defined for feedforward networks");
  if (alignment.every == 0) fail("alignment.every must be positive");
  if (task.kind == "idx" && (task.train_images.empty() || task.train_labels.empty() ||
                             task.test_images.empty() || task.test_labels.empty()))
    fail("idx task needs train/test image and label paths");
  if (task.kind != "idx" && (task.train_size == 0 || task.test_size == 0))
    fail("train_size and test_size must be positive");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::invalid_config, path.string() + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

ExperimentConfig apply_overrides(ExperimentConfig c, const ConfigOverrides& o) {
  if (o.rule) c.rule = *o.rule;
  if (o.width) c.arch.width = *o.width;
  if (o.learning_rate) c.learning_rate = *o.learning_rate;
  if (o.seed) c.seed = *o.seed;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.out_dir) c.out_dir = *o.out_dir;
  return c;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << json(config).dump(2) << '\n';
}

// ---- data and architecture -------------------------------------------------

TaskData load_task(const TaskConfig& task) {
  TaskData data;
  if (task.kind == "add") {
    data.sequential = true;
    data.sequences = gen_add_task(task.train_size, task.test_size, task.length, task.bernoulli,
                                  task.data_seed);
  } else if (task.kind == "synth") {
    Rng rng(task.data_seed, 11);
    const ClassificationSet all = gen_synthetic_classification(
        task.train_size + task.test_size, task.input_dim, task.classes, task.margin, rng);
    data.train = all.slice(0, task.train_size);
    data.test = all.slice(task.train_size, task.test_size);
  } else if (task.kind == "glyphs") {
    Rng rng(task.data_seed, 12);
    const GlyphImages train = gen_glyph_images(task.train_size, rng);
    const GlyphImages test = gen_glyph_images(task.test_size, rng);
    data.train = idx_to_classification(train.images, train.labels);
    data.test = idx_to_classification(test.images, test.labels);
  } else if (task.kind == "idx") {
    data.train = load_idx(task.train_images, task.train_labels, task.classes, task.train_size);
    data.test = load_idx(task.test_images, task.test_labels, task.classes, task.test_size);
  } else {
    throw Error(ErrorKind::invalid_config, "unknown task kind '" + task.kind + "'");
  }
  return data;
}

NetworkSpec build_network(const ExperimentConfig& config, const TaskData& data) {
  const Activation act = parse_activation(config.arch.activation);
  const std::size_t classes = data.train.classes;
  if (config.arch.kind == "mlp") {
    const std::vector<std::size_t> hidden(config.arch.depth - 1, config.arch.width);
    return NetworkSpec::mlp(static_cast<std::size_t>(data.train.inputs.rows()), hidden, classes,
                            act);
  }
  if (config.arch.kind == "cnn") {
    if (data.train.image.size() == 0)
      throw Error(ErrorKind::invalid_config, "cnn needs image-shaped inputs");
    return NetworkSpec::cnn(data.train.image, config.arch.width, config.arch.strides, classes,
                            act);
  }
  throw Error(ErrorKind::invalid_config, "arch '" + config.arch.kind + "' is not feedforward");
}

RnnSpec build_rnn(const ExperimentConfig& config) {
  RnnSpec spec;
  spec.hidden = config.arch.width;
  spec.activation = parse_activation(config.arch.activation);
  return spec;
}

// ---- metrics ---------------------------------------------------------------------

std::string format_number(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string to_csv_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << r.step << ',' << r.epoch << ',' << r.rule << ',' << r.width << ','
      << format_number(r.learning_rate) << ',' << r.seed << ',' << format_number(r.train_loss)
      << ',' << format_number(r.test_loss) << ',';
  if (r.test_accuracy) out << format_number(*r.test_accuracy);
  out << ',';
  if (r.alignment)
    for (std::size_t i = 0; i < r.alignment->size(); ++i)
      out << (i ? ";" : "") << format_number((*r.alignment)[i]);
  out << ',' << r.wall_time_ms;
  return out.str();
}

// ---- alignment -------------------------------------------------------------------

std::vector<double> measure_alignment(const ParamSet& current, const ParamSet& init,
                                      const CompanionState& companion, const NetworkSpec& spec,
                                      const std::vector<std::size_t>& layers, std::size_t probes,
                                      Rng& rng) {
  std::vector<double> scores;
  for (std::size_t l : layers) {
    const auto delta = CorrelationOperator::delta(current, init, l);
    const auto sigma = CorrelationOperator::sigma(companion, init, spec, l);
    try {
      if (probes == 0 && delta.dim() <= kDenseCap)
        scores.push_back(alignment_score_dense(delta, sigma));
      else
        scores.push_back(
            alignment_score_stochastic(delta, sigma, probes == 0 ? 1000 : probes, rng).score);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_score) throw;
      scores.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return scores;
}

// ---- run ----------------------------------------------------------------------------

namespace {

constexpr std::size_t kEvalChunk = 500;

Batch gather(const ClassificationSet& set, const std::vector<std::size_t>& ids) {
  Batch b;
  b.inputs.resize(set.inputs.rows(), static_cast<long>(ids.size()));
  b.targets.resize(set.targets.rows(), static_cast<long>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    b.inputs.col(static_cast<long>(i)) = set.inputs.col(static_cast<long>(ids[i]));
    b.targets.col(static_cast<long>(i)) = set.targets.col(static_cast<long>(ids[i]));
  }
  b.ids = ids;
  return b;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const NetworkSpec& spec, const ParamSet& params, const ClassificationSet& set) {
  Evaluation ev;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < set.size(); begin += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, set.size() - begin);
    const Matrix out = forward(spec, params, set.inputs.middleCols(static_cast<long>(begin),
                                                                   static_cast<long>(count)))
                           .output();
    const Matrix y = set.targets.middleCols(static_cast<long>(begin), static_cast<long>(count));
    loss_sum += 0.5 * (out - y).squaredNorm();
    const std::span<const int> labels(set.labels.data() + begin, count);
    correct += static_cast<std::size_t>(std::lround(accuracy(out, labels) * count));
  }
  ev.loss = loss_sum / static_cast<double>(set.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return ev;
}

double evaluate_sequences(const RnnSpec& spec, const RnnParams& params,
                          const std::vector<Sequence>& seqs) {
  std::vector<std::size_t> ids(seqs.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const SequenceBatch batch = make_sequence_batch(seqs, ids);
  const RnnTrace trace = rnn_unroll(spec, params, batch.inputs);
  return sequence_loss(trace.predictions, batch.targets);
}

SnapshotMode choose_snapshot(const std::string& mode, const NetworkSpec& spec, std::size_t n) {
  if (mode == "cached") return SnapshotMode::cached;
  if (mode == "recompute") return SnapshotMode::recompute;
  constexpr std::size_t kCacheBudget = std::size_t{512} << 20;
  return cached_snapshot_bytes(spec, n) <= kCacheBudget ? SnapshotMode::cached
                                                         : SnapshotMode::recompute;
}

std::string layer_key(const char* prefix, std::size_t l, const char* part) {
  return std::string(prefix) + "." + part + std::to_string(l + 1);
}

void add_params(ArrayBundle& bundle, const char* prefix, const std::vector<Matrix>& weights,
                const std::vector<Vector>* biases) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    bundle[layer_key(prefix, l, "W")] = Tensor::from_matrix(weights[l]);
    if (biases) bundle[layer_key(prefix, l, "b")] = Tensor::from_matrix((*biases)[l]);
  }
}

std::vector<Matrix> read_weights(const ArrayBundle& bundle, const char* prefix, std::size_t depth) {
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto it = bundle.find(layer_key(prefix, l, "W"));
    if (it == bundle.end())
      throw Error(ErrorKind::io, "parameter bundle lacks " + layer_key(prefix, l, "W"));
    out.push_back(it->second.to_matrix());
  }
  return out;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    out_.open(std::filesystem::path(dir) / "metrics.csv");
    if (!out_) throw Error(ErrorKind::io, "cannot write metrics under " + dir);
    out_ << kMetricsHeader << '\n';
    out_.flush();
  }
  void row(const MetricsRecord& r) {
    if (!out_.is_open()) return;
    out_ << to_csv_row(r) << '\n';
    out_.flush();
  }
  void footer(const RunResult& result) {
    if (!out_.is_open()) return;
    out_ << "# complete=" << (result.diverged ? 0 : 1) << " diverged=" << (result.diverged ? 1 : 0)
         << " best_epoch=" << result.best_epoch << " best_test_accuracy="
         << (result.best_test_accuracy ? format_number(*result.best_test_accuracy) : "")
         << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

json summary_json(const RunResult& r) {
  json j;
  j["config"] = r.config;
  j["complete"] = !r.diverged;
  j["diverged"] = r.diverged;
  if (r.diverged) j["divergence"] = r.divergence;
  j["epochs_run"] = r.records.empty() ? 0 : r.last().epoch;
  j["final_train_loss"] = r.records.empty() ? json() : json(r.last().train_loss);
  j["final_test_loss"] = r.records.empty() ? json() : json(r.last().test_loss);
  j["best_epoch"] = r.best_epoch;
  j["best_test_accuracy"] = r.best_test_accuracy ? json(*r.best_test_accuracy) : json();
  std::vector<std::size_t> layers;
  for (auto l : r.alignment_layers) layers.push_back(l + 1);
  j["alignment_layers"] = layers;
  if (r.final_alignment) {
    json scores = json::array();
    for (double s : *r.final_alignment) scores.push_back(std::isnan(s) ? json() : json(s));
    j["final_alignment"] = scores;
  }
  return j;
}

void finish_run_dir(const RunResult& result) {
  const std::filesystem::path dir = result.config.out_dir;
  if (dir.empty()) return;
  save_config(dir / "config.json", result.config);
  std::ofstream(dir / "summary.json") << summary_json(result).dump(2) << '\n';
  ArrayBundle bundle;
  if (result.config.arch.kind == "rnn") {
    const std::vector<Matrix> init{result.rnn_init.w_hidden, result.rnn_init.w_input,
                                   result.rnn_init.w_output};
    const std::vector<Matrix> fin{result.rnn_final.w_hidden, result.rnn_final.w_input,
                                  result.rnn_final.w_output};
    add_params(bundle, "init", init, nullptr);
    add_params(bundle, "final", fin, nullptr);
  } else {
    add_params(bundle, "init", result.init.weights, &result.init.biases);
    add_params(bundle, "final", result.final.weights, &result.final.biases);
    if (result.companion) add_params(bundle, "companion", result.companion->weights, nullptr);
  }
  save_bundle(dir / "params", bundle);
}

void track_best(RunResult& result, const MetricsRecord& rec) {
  if (!rec.test_accuracy) return;
  if (!result.best_test_accuracy || *rec.test_accuracy > *result.best_test_accuracy) {
    result.best_test_accuracy = rec.test_accuracy;
    result.best_epoch = rec.epoch;
  }
}

void run_feedforward(RunResult& result, const TaskData& data, MetricsWriter& writer,
                     const std::chrono::steady_clock::time_point start) {
  const ExperimentConfig& cfg = result.config;
  const RuleKind rule = parse_rule(cfg.rule);
  result.spec = build_network(cfg, data);
  const NetworkSpec& spec = result.spec;
  const std::size_t n = data.train.size();
  TrainConfig{cfg.learning_rate, cfg.batch_size, cfg.epochs, rule, cfg.seed}.validate(n);

  Rng init_rng(cfg.seed, 1);
  result.init = init_params(spec, init_rng);
  TrainState state{result.init, 0, std::nullopt, Rng(cfg.seed, 3)};
  if (cfg.alignment.companion) state.companion = CompanionState::from_init(result.init);

  std::optional<InitSnapshot> snapshot;
  if (needs_snapshot(rule) || cfg.alignment.companion)
    snapshot.emplace(spec, result.init, data.train.inputs,
                     choose_snapshot(cfg.snapshot, spec, n));
  std::optional<FixedFeedback> feedback;
  if (needs_fixed_feedback(rule)) {
    Rng fb_rng(cfg.seed, 2);
    feedback = FixedFeedback::draw(spec, fb_rng);
  }
  const RuleContext ctx{snapshot ? &*snapshot : nullptr, feedback ? &*feedback : nullptr};

  if (cfg.alignment.companion) {
    if (cfg.alignment.layers.empty())
      for (std::size_t l = 0; l < spec.depth(); ++l) result.alignment_layers.push_back(l);
    for (std::size_t l : cfg.alignment.layers) {
      if (l == 0 || l > spec.depth())
        throw Error(ErrorKind::invalid_config, "alignment layer " + std::to_string(l) +
                                                   " out of range");
      result.alignment_layers.push_back(l - 1);
    }
  }
  Rng probe_rng(cfg.seed, 4);

  auto record = [&](std::size_t epoch) {
    const Evaluation tr = evaluate(spec, state.params, data.train);
    const Evaluation te = evaluate(spec, state.params, data.test);
    MetricsRecord rec;
    rec.step = state.step;
    rec.epoch = epoch;
    rec.rule = cfg.rule;
    rec.width = cfg.arch.width;
    rec.learning_rate = cfg.learning_rate;
    rec.seed = cfg.seed;
    rec.train_loss = tr.loss;
    rec.test_loss = te.loss;
    rec.test_accuracy = te.accuracy;
    if (!std::isfinite(tr.loss) || !std::isfinite(te.loss))
      throw Error(ErrorKind::non_finite, "loss is not finite at epoch " + std::to_string(epoch));
    const bool measure = state.companion && epoch > 0 &&
                         (epoch % cfg.alignment.every == 0 || epoch == cfg.epochs);
    if (measure) {
      rec.alignment = measure_alignment(state.params, result.init, *state.companion, spec,
                                        result.alignment_layers, cfg.alignment.probes, probe_rng);
      result.final_alignment = rec.alignment;
    }
    rec.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    writer.row(rec);
    track_best(result, rec);
    result.records.push_back(std::move(rec));
  };

  try {
    record(0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (const auto& ids : epoch_batches(n, cfg.batch_size, state.rng))
        state = train_step(state, rule, spec, ctx, gather(data.train, ids), cfg.learning_rate);
      record(epoch);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::non_finite) throw;
    result.diverged = true;
    result.divergence = e.what();
  }
  result.final = state.params;
  result.companion = state.companion;
}

void run_recurrent(RunResult& result, const TaskData& data, MetricsWriter& writer,
                   const std::chrono::steady_clock::time_point start) {
  const ExperimentConfig& cfg = result.config;
  const RuleKind rule = parse_rule(cfg.rule);
  result.rnn_spec = build_rnn(cfg);
  const RnnSpec& spec = result.rnn_spec;
  const auto& train = data.sequences.train;
  const std::size_t n = train.size();
  TrainConfig{cfg.learning_rate, cfg.batch_size, cfg.epochs, rule, cfg.seed}.validate(n);

  Rng init_rng(cfg.seed, 1);
  result.rnn_init = init_rnn_params(spec, init_rng);
  RnnTrainState state{result.rnn_init, 0, Rng(cfg.seed, 3)};
  std::optional<RnnSnapshot> snapshot;
  if (needs_snapshot(rule))
    snapshot.emplace(spec, result.rnn_init, sequence_inputs(train),
                     cfg.snapshot == "recompute" ? SnapshotMode::recompute : SnapshotMode::cached);
  const RnnRuleContext ctx{snapshot ? &*snapshot : nullptr, cfg.window};

  auto record = [&](std::size_t epoch) {
    MetricsRecord rec;
    rec.step = state.step;
    rec.epoch = epoch;
    rec.rule = cfg.rule;
    rec.width = cfg.arch.width;
    rec.learning_rate = cfg.learning_rate;
    rec.seed = cfg.seed;
    rec.train_loss = evaluate_sequences(spec, state.params, train);
    rec.test_loss = evaluate_sequences(spec, state.params, data.sequences.test);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.test_loss))
      throw Error(ErrorKind::non_finite, "loss is not finite at epoch " + std::to_string(epoch));
    rec.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
    writer.row(rec);
    result.records.push_back(std::move(rec));
  };

  try {
    record(0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (const auto& ids : epoch_batches(n, cfg.batch_size, state.rng))
        state = step_rnn(state, rule, spec, ctx, make_sequence_batch(train, ids),
                         cfg.learning_rate);
      if (!state.params.all_finite())
        throw Error(ErrorKind::non_finite, "parameters left the finite range");
      record(epoch);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::non_finite) throw;
    result.diverged = true;
    result.divergence = e.what();
  }
  result.rnn_final = state.params;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.config = config;
  const TaskData data = load_task(config.task);
  MetricsWriter writer(config.out_dir);
  if (data.sequential)
    run_recurrent(result, data, writer, start);
  else
    run_feedforward(result, data, writer, start);
  writer.footer(result);
  finish_run_dir(result);
  return result;
}

nlohmann::json align_run_dir(const std::filesystem::path& run_dir, std::size_t probes) {
  const ExperimentConfig cfg = load_config(run_dir / "config.json");
  if (cfg.arch.kind == "rnn")
    throw Error(ErrorKind::unsupported, "alignment is only defined for feedforward runs");
  const TaskData data = load_task(cfg.task);
  const NetworkSpec spec = build_network(cfg, data);
  const ArrayBundle bundle = load_bundle(run_dir / "params");
  if (!bundle.count(layer_key("companion", 0, "W")))
    throw Error(ErrorKind::invalid_config, run_dir.string() + " was trained without a companion");
  ParamSet init, current;
  init.weights = read_weights(bundle, "init", spec.depth());
  current.weights = read_weights(bundle, "final", spec.depth());
  CompanionState companion;
  companion.weights = read_weights(bundle, "companion", spec.depth());

  json out;
  out["run_dir"] = run_dir.string();
  out["probes"] = probes;
  out["layers"] = json::array();
  Rng rng(cfg.seed, 5);
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    json layer{{"layer", l + 1}};
    const auto delta = CorrelationOperator::delta(current, init, l);
    const auto sigma = CorrelationOperator::sigma(companion, init, spec, l);
    try {
      if (probes == 0) {
        layer["score"] = alignment_score_dense(delta, sigma);
      } else {
        const AlignmentReport r = alignment_score_stochastic(delta, sigma, probes, rng);
        layer["score"] = r.score;
        layer["variance"] = std::isfinite(r.variance) ? json(r.variance) : json();
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_score && e.kind() != ErrorKind::unsupported) throw;
      layer["score"] = json();
      layer["error"] = e.what();
    }
    out["layers"].push_back(layer);
  }
  return out;
}

// ---- sweep -----------------------------------------------------------------------

std::size_t worker_threads() {
  const char* env = std::getenv("ALIGNLAB_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (*end != '\0' || v == 0)
    throw Error(ErrorKind::invalid_config, "ALIGNLAB_THREADS must be a positive integer");
  return v;
}

SweepResult run_sweep(const ExperimentConfig& base, const std::string& axis,
                      const std::vector<double>& values, const std::vector<std::uint64_t>& seeds,
                      std::size_t threads) {
  if (axis != "width" && axis != "lr")
    throw Error(ErrorKind::invalid_config, "sweep axis must be width or lr");
  if (values.size() < 2) throw Error(ErrorKind::invalid_config, "a sweep needs at least 2 values");
  if (seeds.empty()) throw Error(ErrorKind::invalid_config, "a sweep needs at least one seed");

  SweepResult sweep{axis, values, seeds, {}};
  std::vector<ExperimentConfig> jobs;
  for (double v : values)
    for (auto s : seeds) {
      ExperimentConfig c = base;
      if (axis == "width") {
        if (v < 1 || v != std::floor(v))
          throw Error(ErrorKind::invalid_config, "width values must be positive integers");
        c.arch.width = static_cast<std::size_t>(v);
      } else {
        c.learning_rate = v;
      }
      c.seed = s;
      if (!base.out_dir.empty())
        c.out_dir = (std::filesystem::path(base.out_dir) /
                     (axis + "=" + format_number(v)) / ("seed=" + std::to_string(s)))
                        .string();
      c.validate();
      jobs.push_back(std::move(c));
    }

  std::vector<std::optional<RunResult>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_experiment(jobs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t count = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t i = 0;
  for (std::size_t v = 0; v < values.size(); ++v) {
    sweep.runs.emplace_back();
    for (std::size_t s = 0; s < seeds.size(); ++s) sweep.runs.back().push_back(std::move(*results[i++]));
  }
  return sweep;
}

namespace {

struct MeanStd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - out.mean) * (x - out.mean);
  out.std = xs.size() > 1 ? std::sqrt(sq / static_cast<double>(xs.size() - 1)) : 0.0;
  return out;
}

std::string fmt_optional(double v) { return std::isnan(v) ? "" : format_number(v); }

}  // namespace

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& sweep) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << "axis,value,seeds,diverged,train_loss_mean,train_loss_std,test_loss_mean,"
         "test_loss_std,best_accuracy_mean,best_accuracy_std,alignment_mean,alignment_std\n";
  for (std::size_t v = 0; v < sweep.values.size(); ++v) {
    std::vector<double> train, test, best;
    std::vector<std::vector<double>> align;
    std::size_t diverged = 0;
    for (const RunResult& r : sweep.runs[v]) {
      if (r.diverged) {
        ++diverged;
        continue;
      }
      train.push_back(r.last().train_loss);
      test.push_back(r.last().test_loss);
      if (r.best_test_accuracy) best.push_back(*r.best_test_accuracy);
      if (r.final_alignment) {
        align.resize(r.final_alignment->size());
        for (std::size_t l = 0; l < r.final_alignment->size(); ++l)
          if (!std::isnan((*r.final_alignment)[l])) align[l].push_back((*r.final_alignment)[l]);
      }
    }
    const MeanStd tr = mean_std(train), te = mean_std(test), bs = mean_std(best);
    std::string am, as;
    for (std::size_t l = 0; l < align.size(); ++l) {
      const MeanStd a = mean_std(align[l]);
      am += (l ? ";" : "") + fmt_optional(a.mean);
      as += (l ? ";" : "") + fmt_optional(a.std);
    }
    out << sweep.axis << ',' << format_number(sweep.values[v]) << ',' << sweep.seeds.size() << ','
        << diverged << ',' << fmt_optional(tr.mean) << ',' << fmt_optional(tr.std) << ','
        << fmt_optional(te.mean) << ',' << fmt_optional(te.std) << ',' << fmt_optional(bs.mean)
        << ',' << fmt_optional(bs.std) << ',' << am << ',' << as << '\n';
  }
}

// ---- data export ---------------------------------------------------------------

void generate_data(const TaskConfig& task, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  if (task.kind == "add") {
    const AddTaskSet set =
        gen_add_task(task.train_size, task.test_size, task.length, task.bernoulli, task.data_seed);
    auto save = [&](const std::vector<Sequence>& seqs, const char* name) {
      Tensor x({seqs.size(), set.length}), y({seqs.size(), set.length});
      for (std::size_t i = 0; i < seqs.size(); ++i)
        for (std::size_t k = 0; k < set.length; ++k) {
          x.data[i * set.length + k] = seqs[i].x[k];
          y.data[i * set.length + k] = seqs[i].y[k];
        }
      save_bundle(out / name, {{"x", x}, {"y", y}});
    };
    save(set.train, "add_train");
    save(set.test, "add_test");
  } else if (task.kind == "synth") {
    const TaskData data = load_task(task);
    auto save = [&](const ClassificationSet& s, const char* name) {
      Tensor labels({s.size()});
      for (std::size_t i = 0; i < s.size(); ++i) labels.data[i] = s.labels[i];
      // examples as rows
      save_bundle(out / name, {{"inputs", Tensor::from_matrix(s.inputs.transpose())},
                               {"targets", Tensor::from_matrix(s.targets.transpose())},
                               {"labels", labels}});
    };
    save(data.train, "synth_train");
    save(data.test, "synth_test");
  } else if (task.kind == "glyphs") {
    Rng rng(task.data_seed, 12);
    const GlyphImages train = gen_glyph_images(task.train_size, rng);
    const GlyphImages test = gen_glyph_images(task.test_size, rng);
    write_idx(out / "train-images-idx3-ubyte", train.images);
    write_idx(out / "train-labels-idx1-ubyte", train.labels);
    write_idx(out / "t10k-images-idx3-ubyte", test.images);
    write_idx(out / "t10k-labels-idx1-ubyte", test.labels);
  } else {
    throw Error(ErrorKind::invalid_config, "gen-data supports add, synth and glyphs");
  }
}

}  // namespace alignlab
