#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "alignlab/network.hpp"

namespace alignlab {

enum class SnapshotMode {
  /// Store sigma(z^(0)_{l-1}(x)) and g_l(x) for every example up front.
  cached,
  /// Store only the init parameters and inputs; rebuild on demand.
  recompute,
};

/// Frozen feedback signals and activations for one batch.
struct FeedbackBatch {
  /// g_l(x) e(x) per layer, one column per batch example.
  std::vector<Matrix> deltas;
  /// sigma(z^(0)_{l-1}(x)) per layer (inputs of layer l).
  std::vector<Matrix> activations;
};

/// Time-0 state of a feedforward network: the init parameters, per-example
/// activations, and per-example feedback Jacobians g_l(x) = grad_{z_l} f^(0)(x)
/// with g_N = I. Immutable after construction.
class InitSnapshot {
 public:
  InitSnapshot(NetworkSpec spec, ParamSet init, Matrix dataset_inputs,
               SnapshotMode mode = SnapshotMode::cached);

  const NetworkSpec& spec() const { return spec_; }
  const ParamSet& init_params() const { return init_; }
  SnapshotMode mode() const { return mode_; }
  std::size_t num_examples() const { return static_cast<std::size_t>(inputs_.cols()); }

  /// g_l(x) for a dataset example; layer is 0-based (layer 0 is l = 1).
  Matrix jacobian(std::size_t example, std::size_t layer) const;
  /// sigma(z^(0)_{l-1}(x)) for a dataset example, 0-based layer.
  Vector activation(std::size_t example, std::size_t layer) const;

  /// g_l(x) e(x) and time-0 activations for the batch `ids` with output
  /// errors `errors` (one column per id).
  FeedbackBatch project(std::span<const std::size_t> ids, const Matrix& errors) const;

 private:
  void check_ids(std::span<const std::size_t> ids) const;

  NetworkSpec spec_;
  ParamSet init_;
  Matrix inputs_;
  SnapshotMode mode_;
  std::vector<Matrix> activations_;              // [layer] dim x n
  std::vector<std::vector<Matrix>> jacobians_;   // [example][layer]
};

/// Builds a snapshot over the whole dataset (columns are examples).
InitSnapshot feedback_jacobians(const ParamSet& init, const NetworkSpec& spec,
                                const Matrix& dataset_inputs,
                                SnapshotMode mode = SnapshotMode::cached);

/// Rough memory the cached mode would need, in bytes.
std::size_t cached_snapshot_bytes(const NetworkSpec& spec, std::size_t examples);

}  // namespace alignlab
