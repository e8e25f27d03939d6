#include "alignlab/rules.hpp"

#include <cmath>

#include "alignlab/error.hpp"

namespace alignlab {

using Index = Eigen::Index;

std::string to_string(RuleKind rule) {
  switch (rule) {
    case RuleKind::normal: return "normal";
    case RuleKind::align_zero: return "align-zero";
    case RuleKind::align_ada: return "align-ada";
    case RuleKind::fa: return "fa";
    case RuleKind::dfa: return "dfa";
    case RuleKind::last_layer: return "last-layer";
    case RuleKind::readout_only: return "readout-only";
  }
  return "?";
}

RuleKind parse_rule(std::string_view name) {
  for (RuleKind r : {RuleKind::normal, RuleKind::align_zero, RuleKind::align_ada, RuleKind::fa,
                     RuleKind::dfa, RuleKind::last_layer, RuleKind::readout_only})
    if (to_string(r) == name) return r;
  throw Error(ErrorKind::invalid_config, "unknown rule '" + std::string(name) + "'");
}

bool needs_snapshot(RuleKind rule) {
  return rule == RuleKind::align_zero || rule == RuleKind::align_ada;
}

bool needs_fixed_feedback(RuleKind rule) { return rule == RuleKind::fa || rule == RuleKind::dfa; }

void TrainConfig::validate(std::size_t dataset_size) const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorKind::invalid_config, "learning rate must be positive");
  if (batch_size == 0 || batch_size > dataset_size)
    throw Error(ErrorKind::invalid_config, "batch size must be in [1, dataset size]");
}

FixedFeedback FixedFeedback::draw(const NetworkSpec& spec, Rng& rng) {
  FixedFeedback fb;
  const auto outputs = static_cast<Index>(spec.output_dim());
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    Matrix b(static_cast<Index>(layer.weight_rows()), static_cast<Index>(layer.weight_cols()));
    for (Index r = 0; r < b.rows(); ++r)
      for (Index c = 0; c < b.cols(); ++c) b(r, c) = rng.normal();
    fb.backward.push_back(std::move(b));
  }
  for (std::size_t l = 0; l + 1 < spec.depth(); ++l) {
    Matrix d(static_cast<Index>(spec.layers[l].out_dim), outputs);
    const double direct_scale = 1.0 / std::sqrt(static_cast<double>(spec.layers[l].out_dim));
    for (Index r = 0; r < d.rows(); ++r)
      for (Index c = 0; c < d.cols(); ++c) d(r, c) = rng.normal() * direct_scale;
    fb.direct.push_back(std::move(d));
  }
  fb.direct.push_back(Matrix::Identity(outputs, outputs));
  return fb;
}

Gradients rule_direction(RuleKind rule, const NetworkSpec& spec, const ParamSet& params,
                         const RuleContext& ctx, const Batch& batch, Matrix* errors_out) {
  if (batch.inputs.cols() == 0) throw Error(ErrorKind::empty_input, "empty batch");
  if (batch.targets.cols() != batch.inputs.cols() ||
      static_cast<std::size_t>(batch.targets.rows()) != spec.output_dim())
    throw Error(ErrorKind::shape_mismatch, "targets do not match the batch");
  if (needs_snapshot(rule) && ctx.snapshot == nullptr)
    throw Error(ErrorKind::invalid_config, to_string(rule) + " requires an init snapshot");
  if (needs_fixed_feedback(rule) && ctx.feedback == nullptr)
    throw Error(ErrorKind::invalid_config, to_string(rule) + " requires fixed feedback");

  const ForwardTrace trace = forward(spec, params, batch.inputs);
  Matrix errors = trace.output() - batch.targets;
  const std::size_t depth = spec.depth();
  Gradients direction;

  switch (rule) {
    case RuleKind::normal: {
      const auto deltas = backward_deltas(spec, params.weights, trace, errors);
      direction = accumulate_gradients(spec, deltas, trace.post);
      break;
    }
    case RuleKind::align_zero: {
      const FeedbackBatch fb = ctx.snapshot->project(batch.ids, errors);
      direction = accumulate_gradients(spec, fb.deltas, fb.activations);
      break;
    }
    case RuleKind::align_ada: {
      const FeedbackBatch fb = ctx.snapshot->project(batch.ids, errors);
      direction = accumulate_gradients(spec, fb.deltas, trace.post);
      break;
    }
    case RuleKind::fa: {
      if (ctx.feedback->backward.size() != depth)
        throw Error(ErrorKind::shape_mismatch, "feedback does not match the network");
      const auto deltas = backward_deltas(spec, ctx.feedback->backward, trace, errors);
      direction = accumulate_gradients(spec, deltas, trace.post);
      break;
    }
    case RuleKind::dfa: {
      if (ctx.feedback->direct.size() != depth)
        throw Error(ErrorKind::shape_mismatch, "feedback does not match the network");
      std::vector<Matrix> deltas(depth);
      for (std::size_t l = 0; l < depth; ++l) deltas[l] = ctx.feedback->direct[l] * errors;
      direction = accumulate_gradients(spec, deltas, trace.post);
      break;
    }
    case RuleKind::last_layer:
    case RuleKind::readout_only: {
      std::vector<Matrix> deltas(depth);
      deltas[depth - 1] = errors;
      std::vector<bool> trained(depth, false);
      trained[depth - 1] = true;
      direction = accumulate_gradients(spec, deltas, trace.post, trained);
      break;
    }
  }
  if (errors_out != nullptr) *errors_out = std::move(errors);
  return direction;
}

TrainState train_step(TrainState state, RuleKind rule, const NetworkSpec& spec,
                      const RuleContext& ctx, const Batch& batch, double learning_rate) {
  if (state.params.step != state.step)
    throw Error(ErrorKind::step_mismatch, "params time tag differs from the trainer step");
  if (state.companion && ctx.snapshot == nullptr)
    throw Error(ErrorKind::invalid_config, "companion tracking requires an init snapshot");
  Matrix errors;
  const Gradients direction = rule_direction(rule, spec, state.params, ctx, batch, &errors);
  if (state.companion)
    state.companion = companion_step(std::move(*state.companion), *ctx.snapshot, batch.ids,
                                     errors, learning_rate, state.step);
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    state.params.weights[l] -= learning_rate * direction.weights[l];
    state.params.biases[l] -= learning_rate * direction.biases[l];
  }
  ++state.step;
  state.params.step = state.step;
  return state;
}

TrainState step_normal(TrainState state, const NetworkSpec& spec, const Batch& batch,
                       double learning_rate) {
  return train_step(std::move(state), RuleKind::normal, spec, {}, batch, learning_rate);
}

TrainState step_align_zero(TrainState state, const InitSnapshot& snapshot,
                           const NetworkSpec& spec, const Batch& batch, double learning_rate) {
  return train_step(std::move(state), RuleKind::align_zero, spec, {&snapshot, nullptr}, batch,
                    learning_rate);
}

TrainState step_align_ada(TrainState state, const InitSnapshot& snapshot,
                          const NetworkSpec& spec, const Batch& batch, double learning_rate) {
  return train_step(std::move(state), RuleKind::align_ada, spec, {&snapshot, nullptr}, batch,
                    learning_rate);
}

TrainState step_fa(TrainState state, const FixedFeedback& feedback, const NetworkSpec& spec,
                   const Batch& batch, double learning_rate) {
  return train_step(std::move(state), RuleKind::fa, spec, {nullptr, &feedback}, batch,
                    learning_rate);
}

TrainState step_dfa(TrainState state, const FixedFeedback& feedback, const NetworkSpec& spec,
                    const Batch& batch, double learning_rate) {
  return train_step(std::move(state), RuleKind::dfa, spec, {nullptr, &feedback}, batch,
                    learning_rate);
}

TrainState step_frozen_body(TrainState state, const NetworkSpec& spec, const Batch& batch,
                            double learning_rate) {
  return train_step(std::move(state), RuleKind::last_layer, spec, {}, batch, learning_rate);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size == 0) throw Error(ErrorKind::invalid_config, "batch size must be positive");
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

RnnGradients rnn_rule_direction(RuleKind rule, const RnnSpec& spec, const RnnParams& params,
                                const RnnRuleContext& ctx, const SequenceBatch& batch) {
  if (batch.size() == 0) throw Error(ErrorKind::empty_input, "empty sequence batch");
  if (needs_snapshot(rule) && ctx.snapshot == nullptr)
    throw Error(ErrorKind::invalid_config, to_string(rule) + " requires an init snapshot");
  const RnnTrace trace = rnn_unroll(spec, params, batch.inputs);
  const auto errors = sequence_errors(trace, batch.targets);
  switch (rule) {
    case RuleKind::normal:
      return rnn_update_direction(spec, params, trace, trace, batch.inputs, errors,
                                  RnnParamGroup::all);
    case RuleKind::align_zero: {
      const RnnTrace init = ctx.snapshot->trace(batch.ids);
      return rnn_update_direction(spec, ctx.snapshot->init_params(), init, init, batch.inputs,
                                  errors, RnnParamGroup::all, ctx.window);
    }
    case RuleKind::align_ada: {
      const RnnTrace init = ctx.snapshot->trace(batch.ids);
      return rnn_update_direction(spec, ctx.snapshot->init_params(), init, trace, batch.inputs,
                                  errors, RnnParamGroup::all, ctx.window);
    }
    case RuleKind::last_layer:
    case RuleKind::readout_only:
      return rnn_update_direction(spec, params, trace, trace, batch.inputs, errors,
                                  RnnParamGroup::readout);
    case RuleKind::fa:
    case RuleKind::dfa:
      break;
  }
  throw Error(ErrorKind::unsupported, to_string(rule) + " is not defined for recurrent cells");
}

RnnTrainState step_rnn(RnnTrainState state, RuleKind rule, const RnnSpec& spec,
                       const RnnRuleContext& ctx, const SequenceBatch& batch,
                       double learning_rate) {
  const RnnGradients d = rnn_rule_direction(rule, spec, state.params, ctx, batch);
  state.params.w_hidden -= learning_rate * d.w_hidden;
  state.params.w_input -= learning_rate * d.w_input;
  state.params.w_output -= learning_rate * d.w_output;
  state.params.b_hidden -= learning_rate * d.b_hidden;
  state.params.b_output -= learning_rate * d.b_output;
  ++state.step;
  state.params.step = state.step;
  return state;
}

}  // namespace alignlab
