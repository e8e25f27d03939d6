#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alignlab/alignment.hpp"
#include "alignlab/feedback.hpp"
#include "alignlab/network.hpp"
#include "alignlab/rnn.hpp"

namespace alignlab {

enum class RuleKind { normal, align_zero, align_ada, fa, dfa, last_layer, readout_only };

std::string to_string(RuleKind rule);
RuleKind parse_rule(std::string_view name);
bool needs_snapshot(RuleKind rule);
bool needs_fixed_feedback(RuleKind rule);

struct TrainConfig {
  double learning_rate = 1.0;
  std::size_t batch_size = 100;
  std::size_t epochs = 1;
  RuleKind rule = RuleKind::normal;
  std::uint64_t seed = 0;

  void validate(std::size_t dataset_size) const;
};

/// Fixed random feedback for FA and DFA, drawn once and never updated.
struct FixedFeedback {
  /// FA: one matrix per layer shaped like W_l, used in place of W_l in the
  /// reverse recursion (with the same 1/sqrt(fan_in) factor).
  std::vector<Matrix> backward;
  /// DFA: m_l x m_N per layer, entries N(0, 1) / sqrt(m_l); the last is I.
  std::vector<Matrix> direct;

  static FixedFeedback draw(const NetworkSpec& spec, Rng& rng);
};

struct Batch {
  Matrix inputs;
  Matrix targets;
  std::vector<std::size_t> ids;
};

struct TrainState {
  ParamSet params;
  std::size_t step = 0;
  std::optional<CompanionState> companion;
  Rng rng;
};

/// Read-only inputs a rule may need.
struct RuleContext {
  const InitSnapshot* snapshot = nullptr;
  const FixedFeedback* feedback = nullptr;
};

/// Batch-mean update direction of `rule` (the step is params - lr * direction).
/// `errors_out`, when given, receives the output errors f - y of the batch.
Gradients rule_direction(RuleKind rule, const NetworkSpec& spec, const ParamSet& params,
                         const RuleContext& ctx, const Batch& batch,
                         Matrix* errors_out = nullptr);

/// One Euler step. When the state carries a companion it is advanced with
/// the same batch errors, which requires ctx.snapshot.
TrainState train_step(TrainState state, RuleKind rule, const NetworkSpec& spec,
                      const RuleContext& ctx, const Batch& batch, double learning_rate);

TrainState step_normal(TrainState state, const NetworkSpec& spec, const Batch& batch,
                       double learning_rate);
TrainState step_align_zero(TrainState state, const InitSnapshot& snapshot,
                           const NetworkSpec& spec, const Batch& batch, double learning_rate);
TrainState step_align_ada(TrainState state, const InitSnapshot& snapshot,
                          const NetworkSpec& spec, const Batch& batch, double learning_rate);
TrainState step_fa(TrainState state, const FixedFeedback& feedback, const NetworkSpec& spec,
                   const Batch& batch, double learning_rate);
TrainState step_dfa(TrainState state, const FixedFeedback& feedback, const NetworkSpec& spec,
                    const Batch& batch, double learning_rate);
TrainState step_frozen_body(TrainState state, const NetworkSpec& spec, const Batch& batch,
                            double learning_rate);

/// Shuffled partition of [0, n) into batches; the last may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng);

struct RnnTrainState {
  RnnParams params;
  std::size_t step = 0;
  Rng rng;
};

struct RnnRuleContext {
  const RnnSnapshot* snapshot = nullptr;
  /// Max j - i for the frozen pairwise feedback; 0 means the whole sequence.
  std::size_t window = 0;
};

RnnGradients rnn_rule_direction(RuleKind rule, const RnnSpec& spec, const RnnParams& params,
                                const RnnRuleContext& ctx, const SequenceBatch& batch);

/// normal is full BPTT; align-zero / align-ada use init feedback for every
/// (i, j >= i) pair; readout-only (or last-layer) trains W_o and b_o only.
RnnTrainState step_rnn(RnnTrainState state, RuleKind rule, const RnnSpec& spec,
                       const RnnRuleContext& ctx, const SequenceBatch& batch,
                       double learning_rate);

}  // namespace alignlab
