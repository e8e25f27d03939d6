#include "alignlab/rnn.hpp"

#include <cmath>
#include <string>

#include "alignlab/error.hpp"

namespace alignlab {

using Index = Eigen::Index;

void RnnSpec::validate() const {
  if (input_dim == 0 || hidden == 0 || output_dim == 0)
    throw Error(ErrorKind::invalid_spec, "recurrent cell has a zero extent");
}

bool RnnParams::all_finite() const {
  return w_hidden.allFinite() && w_input.allFinite() && w_output.allFinite() &&
         b_hidden.allFinite() && b_output.allFinite();
}

namespace {

Matrix normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

RnnParams init_rnn_params(const RnnSpec& spec, Rng& rng) {
  spec.validate();
  RnnParams p;
  p.w_hidden = normal_matrix(spec.hidden, spec.hidden, rng);
  p.w_input = normal_matrix(spec.hidden, spec.input_dim, rng);
  p.w_output = normal_matrix(spec.output_dim, spec.hidden, rng);
  p.b_hidden = Vector::Zero(static_cast<Index>(spec.hidden));
  p.b_output = Vector::Zero(static_cast<Index>(spec.output_dim));
  return p;
}

RnnGradients zero_rnn_gradients(const RnnSpec& spec) {
  RnnGradients g;
  const auto m = static_cast<Index>(spec.hidden);
  g.w_hidden = Matrix::Zero(m, m);
  g.w_input = Matrix::Zero(m, static_cast<Index>(spec.input_dim));
  g.w_output = Matrix::Zero(static_cast<Index>(spec.output_dim), m);
  g.b_hidden = Vector::Zero(m);
  g.b_output = Vector::Zero(static_cast<Index>(spec.output_dim));
  return g;
}

RnnTrace rnn_unroll(const RnnSpec& spec, const RnnParams& params,
                    std::span<const Matrix> inputs) {
  if (inputs.empty()) throw Error(ErrorKind::empty_input, "empty input sequence");
  const auto m = static_cast<Index>(spec.hidden);
  const Index batch = inputs[0].cols();
  const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  const double input_scale = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  if (params.w_hidden.rows() != m || params.w_input.cols() != static_cast<Index>(spec.input_dim))
    throw Error(ErrorKind::shape_mismatch, "recurrent parameters do not match the cell spec");

  RnnTrace trace;
  trace.states.reserve(inputs.size() + 1);
  trace.activations.reserve(inputs.size() + 1);
  trace.predictions.reserve(inputs.size());
  trace.states.push_back(Matrix::Zero(m, batch));
  trace.activations.push_back(activate(spec.activation, trace.states[0]));
  for (const Matrix& x : inputs) {
    if (x.rows() != static_cast<Index>(spec.input_dim) || x.cols() != batch)
      throw Error(ErrorKind::shape_mismatch, "input step has the wrong shape");
    Matrix z = (params.w_hidden * trace.activations.back()) * hidden_scale;
    z.noalias() += (params.w_input * x) * input_scale;
    z.colwise() += params.b_hidden;
    trace.activations.push_back(activate(spec.activation, z));
    trace.states.push_back(std::move(z));
    Matrix y = (params.w_output * trace.activations.back()) * hidden_scale;
    y.colwise() += params.b_output;
    trace.predictions.push_back(std::move(y));
  }
  for (const auto& y : trace.predictions)
    if (!y.allFinite()) throw Error(ErrorKind::non_finite, "recurrent prediction is not finite");
  return trace;
}

double sequence_loss(std::span<const Matrix> predictions, std::span<const Matrix> targets) {
  if (predictions.size() != targets.size())
    throw Error(ErrorKind::shape_mismatch, "prediction and target lengths differ");
  if (predictions.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k)
    total += (predictions[k] - targets[k]).squaredNorm() / static_cast<double>(predictions[k].rows());
  return total / static_cast<double>(predictions[0].cols());
}

std::vector<Matrix> sequence_errors(const RnnTrace& trace, std::span<const Matrix> targets) {
  if (trace.predictions.size() != targets.size())
    throw Error(ErrorKind::shape_mismatch, "target length does not match the unrolled trace");
  std::vector<Matrix> errors;
  errors.reserve(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (targets[k].rows() != trace.predictions[k].rows() ||
        targets[k].cols() != trace.predictions[k].cols())
      throw Error(ErrorKind::shape_mismatch, "target step has the wrong shape");
    errors.push_back(trace.predictions[k] - targets[k]);
  }
  return errors;
}

RnnGradients rnn_update_direction(const RnnSpec& spec, const RnnParams& feedback,
                                  const RnnTrace& slope_trace, const RnnTrace& input_trace,
                                  std::span<const Matrix> inputs,
                                  std::span<const Matrix> errors, RnnParamGroup group,
                                  std::size_t window) {
  const std::size_t steps = errors.size();
  if (steps == 0) throw Error(ErrorKind::empty_input, "empty error sequence");
  const auto m = static_cast<Index>(spec.hidden);
  const Index batch = errors[0].cols();
  const double hidden_scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  const double input_scale = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double inv_batch = 1.0 / static_cast<double>(batch);

  RnnGradients g = zero_rnn_gradients(spec);

  // Readout: yhat_k depends on W_o through sigma(z_k) only.
  Matrix stacked_act(m, batch * static_cast<Index>(steps));
  Matrix stacked_err(static_cast<Index>(spec.output_dim), batch * static_cast<Index>(steps));
  for (std::size_t k = 0; k < steps; ++k) {
    stacked_act.middleCols(static_cast<Index>(k) * batch, batch) = input_trace.activations[k + 1];
    stacked_err.middleCols(static_cast<Index>(k) * batch, batch) = errors[k];
  }
  g.w_output.noalias() = (stacked_err * stacked_act.transpose()) * (hidden_scale * inv_batch);
  g.b_output = stacked_err.rowwise().sum() * inv_batch;
  if (group == RnnParamGroup::readout) return g;

  // Adjoints a_k = sum_{j >= k} (d yhat_j / d z_k)^T e_j, k = 1..K.
  std::vector<Matrix> adjoint(steps + 1);
  const Matrix feedback_out_t = feedback.w_output.transpose() * hidden_scale;
  const Matrix feedback_hidden_t = feedback.w_hidden.transpose() * hidden_scale;
  if (window == 0 || window >= steps) {
    for (std::size_t k = steps; k >= 1; --k) {
      Matrix upstream = feedback_out_t * errors[k - 1];
      if (k < steps) upstream.noalias() += feedback_hidden_t * adjoint[k + 1];
      adjoint[k] = upstream.cwiseProduct(
          activate_derivative(spec.activation, slope_trace.states[k]));
    }
  } else {
    std::vector<Matrix> slopes(steps + 1);
    for (std::size_t k = 1; k <= steps; ++k) {
      slopes[k] = activate_derivative(spec.activation, slope_trace.states[k]);
      adjoint[k] = Matrix::Zero(m, batch);
    }
    for (std::size_t j = 1; j <= steps; ++j) {
      Matrix chain = (feedback_out_t * errors[j - 1]).cwiseProduct(slopes[j]);
      adjoint[j] += chain;
      for (std::size_t i = j - 1; i >= 1 && j - i <= window; --i) {
        chain = (feedback_hidden_t * chain).eval().cwiseProduct(slopes[i]);
        adjoint[i] += chain;
      }
    }
  }

  const auto d_in = static_cast<Index>(spec.input_dim);
  Matrix stacked_adj(m, batch * static_cast<Index>(steps));
  Matrix stacked_prev(m, batch * static_cast<Index>(steps));
  Matrix stacked_x(d_in, batch * static_cast<Index>(steps));
  for (std::size_t k = 1; k <= steps; ++k) {
    const Index col = static_cast<Index>(k - 1) * batch;
    stacked_adj.middleCols(col, batch) = adjoint[k];
    stacked_prev.middleCols(col, batch) = input_trace.activations[k - 1];
    stacked_x.middleCols(col, batch) = inputs[k - 1];
  }
  g.w_hidden.noalias() = (stacked_adj * stacked_prev.transpose()) * (hidden_scale * inv_batch);
  g.w_input.noalias() = (stacked_adj * stacked_x.transpose()) * (input_scale * inv_batch);
  g.b_hidden = stacked_adj.rowwise().sum() * inv_batch;
  return g;
}

RnnGradients bptt_grads(const RnnSpec& spec, const RnnParams& params,
                        const SequenceBatch& batch) {
  const RnnTrace trace = rnn_unroll(spec, params, batch.inputs);
  const auto errors = sequence_errors(trace, batch.targets);
  return rnn_update_direction(spec, params, trace, trace, batch.inputs, errors,
                              RnnParamGroup::all);
}

RnnSnapshot::RnnSnapshot(RnnSpec spec, RnnParams init, std::vector<Matrix> sequence_inputs,
                         SnapshotMode mode)
    : spec_(spec), init_(std::move(init)), inputs_(std::move(sequence_inputs)), mode_(mode) {
  if (init_.step != 0) throw Error(ErrorKind::step_mismatch, "snapshot requires t = 0 params");
  if (inputs_.empty() || inputs_[0].cols() == 0)
    throw Error(ErrorKind::empty_input, "snapshot dataset is empty");
  if (mode_ == SnapshotMode::cached) cached_ = rnn_unroll(spec_, init_, inputs_);
}

std::size_t RnnSnapshot::num_sequences() const {
  return static_cast<std::size_t>(inputs_[0].cols());
}

RnnTrace RnnSnapshot::trace(std::span<const std::size_t> ids) const {
  for (std::size_t id : ids)
    if (id >= num_sequences())
      throw Error(ErrorKind::missing_example,
                  "sequence " + std::to_string(id) + " is not covered by the snapshot");
  const auto batch = static_cast<Index>(ids.size());
  auto gather = [&](const Matrix& all) {
    Matrix out(all.rows(), batch);
    for (Index b = 0; b < batch; ++b) out.col(b) = all.col(static_cast<Index>(ids[b]));
    return out;
  };
  if (mode_ == SnapshotMode::recompute) {
    std::vector<Matrix> x;
    x.reserve(inputs_.size());
    for (const auto& step : inputs_) x.push_back(gather(step));
    return rnn_unroll(spec_, init_, x);
  }
  RnnTrace out;
  for (const auto& z : cached_.states) out.states.push_back(gather(z));
  for (const auto& a : cached_.activations) out.activations.push_back(gather(a));
  for (const auto& y : cached_.predictions) out.predictions.push_back(gather(y));
  return out;
}

}  // namespace alignlab
