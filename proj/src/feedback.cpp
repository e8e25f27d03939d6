#include "alignlab/feedback.hpp"

#include <string>

#include "alignlab/error.hpp"

namespace alignlab {

using Index = Eigen::Index;

InitSnapshot::InitSnapshot(NetworkSpec spec, ParamSet init, Matrix dataset_inputs,
                           SnapshotMode mode)
    : spec_(std::move(spec)), init_(std::move(init)), inputs_(std::move(dataset_inputs)),
      mode_(mode) {
  spec_.validate();
  if (init_.step != 0) throw Error(ErrorKind::step_mismatch, "snapshot requires t = 0 params");
  if (inputs_.cols() == 0) throw Error(ErrorKind::empty_input, "snapshot dataset is empty");
  if (static_cast<std::size_t>(inputs_.rows()) != spec_.input_dim())
    throw Error(ErrorKind::shape_mismatch, "dataset width does not match network input");
  if (mode_ == SnapshotMode::recompute) return;

  const ForwardTrace trace = forward(spec_, init_, inputs_);
  activations_ = trace.post;
  jacobians_.reserve(num_examples());
  for (Index i = 0; i < inputs_.cols(); ++i)
    jacobians_.push_back(jacobians_for_example(spec_, init_, inputs_.col(i)));
}

Matrix InitSnapshot::jacobian(std::size_t example, std::size_t layer) const {
  if (example >= num_examples())
    throw Error(ErrorKind::missing_example, "example " + std::to_string(example));
  if (mode_ == SnapshotMode::cached) return jacobians_[example][layer];
  return jacobians_for_example(spec_, init_, inputs_.col(static_cast<Index>(example)))[layer];
}

Vector InitSnapshot::activation(std::size_t example, std::size_t layer) const {
  if (example >= num_examples())
    throw Error(ErrorKind::missing_example, "example " + std::to_string(example));
  if (mode_ == SnapshotMode::cached) return activations_[layer].col(static_cast<Index>(example));
  return forward(spec_, init_, inputs_.col(static_cast<Index>(example))).post[layer].col(0);
}

void InitSnapshot::check_ids(std::span<const std::size_t> ids) const {
  for (std::size_t id : ids)
    if (id >= num_examples())
      throw Error(ErrorKind::missing_example,
                  "example " + std::to_string(id) + " is not covered by the snapshot");
}

FeedbackBatch InitSnapshot::project(std::span<const std::size_t> ids,
                                    const Matrix& errors) const {
  check_ids(ids);
  if (static_cast<std::size_t>(errors.cols()) != ids.size() ||
      static_cast<std::size_t>(errors.rows()) != spec_.output_dim())
    throw Error(ErrorKind::shape_mismatch, "error block does not match batch");
  const std::size_t depth = spec_.depth();
  const auto batch = static_cast<Index>(ids.size());
  FeedbackBatch out;

  if (mode_ == SnapshotMode::recompute) {
    Matrix x(inputs_.rows(), batch);
    for (Index b = 0; b < batch; ++b) x.col(b) = inputs_.col(static_cast<Index>(ids[b]));
    const ForwardTrace trace = forward(spec_, init_, x);
    out.deltas = backward_deltas(spec_, init_.weights, trace, errors);
    out.activations = trace.post;
    return out;
  }

  out.deltas.resize(depth);
  out.activations.resize(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    out.deltas[l].resize(static_cast<Index>(spec_.layers[l].out_dim), batch);
    out.activations[l].resize(activations_[l].rows(), batch);
    for (Index b = 0; b < batch; ++b) {
      const std::size_t id = ids[static_cast<std::size_t>(b)];
      out.deltas[l].col(b).noalias() = jacobians_[id][l] * errors.col(b);
      out.activations[l].col(b) = activations_[l].col(static_cast<Index>(id));
    }
  }
  return out;
}

InitSnapshot feedback_jacobians(const ParamSet& init, const NetworkSpec& spec,
                                const Matrix& dataset_inputs, SnapshotMode mode) {
  return InitSnapshot(spec, init, dataset_inputs, mode);
}

std::size_t cached_snapshot_bytes(const NetworkSpec& spec, std::size_t examples) {
  std::size_t per_example = 0;
  for (const auto& layer : spec.layers)
    per_example += layer.in_dim + layer.out_dim * spec.output_dim();
  return per_example * examples * sizeof(double);
}

}  // namespace alignlab
