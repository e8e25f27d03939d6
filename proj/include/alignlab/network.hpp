#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "alignlab/activation.hpp"
#include "alignlab/rng.hpp"
#include "alignlab/tensor.hpp"

namespace alignlab {

enum class LayerKind { dense, conv2d, readout };

/// Channel-major feature map; a column holds index c*H*W + y*W + x.
struct MapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t pixels() const { return height * width; }
  bool operator==(const MapShape&) const = default;
};

/// One layer z_l = W_l * a_{l-1} / sqrt(fan_in) + b_l.
///
/// conv2d uses 3x3 kernels with zero padding 1; weights are stored as
/// out_channels x (in_channels * 9). readout global-average-pools its input
/// map and applies a dense map over channels.
struct LayerSpec {
  static constexpr std::size_t kKernel = 3;

  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  MapShape in_map{};
  MapShape out_map{};
  std::size_t stride = 1;
  Activation activation = Activation::identity;

  static LayerSpec dense(std::size_t in, std::size_t out, Activation act);
  static LayerSpec conv2d(MapShape in, std::size_t out_channels, std::size_t stride,
                          Activation act);
  static LayerSpec readout(MapShape in, std::size_t out, Activation act = Activation::identity);

  /// Scaling fan-in: inputs for dense, 9 * in_channels for conv2d, channels
  /// for readout.
  std::size_t fan_in() const;
  std::size_t weight_rows() const;
  std::size_t weight_cols() const;
  std::size_t bias_size() const { return weight_rows(); }
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in_dim; }
  std::size_t output_dim() const { return layers.back().out_dim; }
  /// Throws invalid_spec when empty or adjacent shapes do not compose.
  void validate() const;

  static NetworkSpec mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t output_dim, Activation act);
  /// Conv stack with one stride per conv layer, followed by a readout.
  static NetworkSpec cnn(MapShape input, std::size_t channels,
                         const std::vector<std::size_t>& strides, std::size_t output_dim,
                         Activation act);
};

struct ParamSet {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::size_t step = 0;

  bool all_finite() const;
};

/// Same shapes as a ParamSet; used for gradients and rule updates.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros(const NetworkSpec& spec);
};

/// W ~ N(0, 1) entrywise, b = 0; the 1/sqrt(fan_in) factor is in forward().
ParamSet init_params(const NetworkSpec& spec, Rng& rng);

/// Batch forward pass. Columns of `x` are examples.
struct ForwardTrace {
  /// pre[l] = z_{l+1}, l = 0..N-1.
  std::vector<Matrix> pre;
  /// post[l] = sigma(z_l); post[0] = x.
  std::vector<Matrix> post;

  const Matrix& output() const { return pre.back(); }
};

ForwardTrace forward(const NetworkSpec& spec, const ParamSet& params, const Matrix& x);

Matrix layer_forward(const LayerSpec& layer, const Matrix& weight, const Vector& bias,
                     const Matrix& input);
/// Transposed layer Jacobian applied to columns of `delta`: J^T delta.
Matrix layer_backward_input(const LayerSpec& layer, const Matrix& weight, const Matrix& delta);
/// Adds sum over columns of d z_l / d(W, b) contracted with delta.
void layer_accumulate_grad(const LayerSpec& layer, const Matrix& delta, const Matrix& input,
                           Matrix& d_weight, Vector& d_bias);

/// Reverse recursion delta_N = e, delta_l = sigma'(z_l) . J_{l+1}^T delta_{l+1},
/// with the Jacobians built from `backward_weights` and the derivatives taken
/// from `derivative_trace`. Returns deltas for layers 1..N (index 0..N-1).
std::vector<Matrix> backward_deltas(const NetworkSpec& spec,
                                    std::span<const Matrix> backward_weights,
                                    const ForwardTrace& derivative_trace,
                                    const Matrix& output_error);

/// Batch-mean update direction from per-layer deltas and per-layer inputs
/// (inputs[l] multiplies layer l+1). Layers flagged false are left zero.
Gradients accumulate_gradients(const NetworkSpec& spec, std::span<const Matrix> deltas,
                               std::span<const Matrix> inputs,
                               const std::vector<bool>& trained = {});

/// Mean over columns of 0.5 * ||f - y||^2.
double squared_error_loss(const Matrix& f, const Matrix& y);

/// Exact gradient of squared_error_loss with respect to every W_l, b_l.
Gradients backprop_grads(const NetworkSpec& spec, const ParamSet& params, const Matrix& x,
                         const Matrix& y);

/// g_l(x) = d f / d z_l transposed (m_l x m_N) for one example, l = 1..N.
std::vector<Matrix> jacobians_for_example(const NetworkSpec& spec, const ParamSet& params,
                                          const Matrix& x_column);

}  // namespace alignlab
