#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "alignlab/activation.hpp"
#include "alignlab/feedback.hpp"
#include "alignlab/rng.hpp"
#include "alignlab/tensor.hpp"

namespace alignlab {

/// Elman cell with tied weights:
///   z_{k+1} = W_h sigma(z_k) / sqrt(m) + b_h + W_i x_k / sqrt(d)
///   yhat_k  = W_o sigma(z_k) / sqrt(m) + b_o
/// with z_0 = 0, k = 1..K.
struct RnnSpec {
  std::size_t input_dim = 1;
  std::size_t hidden = 8;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;

  void validate() const;
};

struct RnnParams {
  Matrix w_hidden;
  Matrix w_input;
  Matrix w_output;
  Vector b_hidden;
  Vector b_output;
  std::size_t step = 0;

  bool all_finite() const;
};

using RnnGradients = RnnParams;

/// All weights N(0, 1), biases zero.
RnnParams init_rnn_params(const RnnSpec& spec, Rng& rng);
RnnGradients zero_rnn_gradients(const RnnSpec& spec);

/// Sequence batch: inputs[k] is x_k (input_dim x B) for k = 0..K-1, and
/// targets[k] is the target of yhat_{k+1} (output_dim x B).
struct SequenceBatch {
  std::vector<Matrix> inputs;
  std::vector<Matrix> targets;
  std::vector<std::size_t> ids;

  std::size_t length() const { return inputs.size(); }
  std::size_t size() const { return inputs.empty() ? 0 : static_cast<std::size_t>(inputs[0].cols()); }
};

struct RnnTrace {
  /// states[k] = z_k, k = 0..K (states[0] = 0).
  std::vector<Matrix> states;
  /// activations[k] = sigma(z_k).
  std::vector<Matrix> activations;
  /// predictions[k] = yhat_{k+1}, k = 0..K-1.
  std::vector<Matrix> predictions;
};

RnnTrace rnn_unroll(const RnnSpec& spec, const RnnParams& params,
                    std::span<const Matrix> inputs);

/// Mean over the batch of sum_k mean_dims (yhat_k - y_k)^2.
double sequence_loss(std::span<const Matrix> predictions, std::span<const Matrix> targets);

/// Output errors e_k = yhat_k - y_k, the gradient of 0.5 * sum_k ||yhat_k - y_k||^2.
std::vector<Matrix> sequence_errors(const RnnTrace& trace, std::span<const Matrix> targets);

enum class RnnParamGroup { all, readout };

/// Batch-mean update direction for tied weights.
///
/// `feedback` supplies W_h and W_o for the reverse recursion,
/// `slope_trace` the sigma'(z_k) factors, and `input_trace` the sigma(z_k)
/// that multiply the adjoints in the weight updates. With window = 0 (or
/// >= K) every pair (i, j) with j >= i contributes; otherwise only pairs
/// with j - i <= window.
RnnGradients rnn_update_direction(const RnnSpec& spec, const RnnParams& feedback,
                                  const RnnTrace& slope_trace, const RnnTrace& input_trace,
                                  std::span<const Matrix> inputs,
                                  std::span<const Matrix> errors, RnnParamGroup group,
                                  std::size_t window = 0);

/// Exact backprop-through-time gradient of 0.5 * sum_k ||yhat_k - y_k||^2,
/// averaged over the batch.
RnnGradients bptt_grads(const RnnSpec& spec, const RnnParams& params,
                        const SequenceBatch& batch);

/// Time-0 traces of every training sequence, for the frozen feedback of the
/// recurrent Align rules. Caches z^(0)_k per sequence (which determines every
/// grad_{z_i} yhat_j^(0)) or recomputes them from the init params.
class RnnSnapshot {
 public:
  RnnSnapshot(RnnSpec spec, RnnParams init, std::vector<Matrix> sequence_inputs,
              SnapshotMode mode = SnapshotMode::cached);

  const RnnParams& init_params() const { return init_; }
  std::size_t num_sequences() const;
  /// Init trace for the sequences `ids`.
  RnnTrace trace(std::span<const std::size_t> ids) const;

 private:
  RnnSpec spec_;
  RnnParams init_;
  std::vector<Matrix> inputs_;  // [k] input_dim x n
  SnapshotMode mode_;
  RnnTrace cached_;
};

}  // namespace alignlab
