#include "alignlab/network.hpp"

#include <cmath>
#include <string>

#include "alignlab/error.hpp"

namespace alignlab {
namespace {

using Index = Eigen::Index;

constexpr std::size_t kTaps = LayerSpec::kKernel * LayerSpec::kKernel;

std::size_t conv_extent(std::size_t in, std::size_t stride) { return (in - 1) / stride + 1; }

// Patch matrix: rows (c, ky, kx), columns (example, oy, ox).
Matrix im2col(const LayerSpec& layer, const Matrix& input) {
  const MapShape& in = layer.in_map;
  const MapShape& out = layer.out_map;
  const Index batch = input.cols();
  const Index out_pixels = static_cast<Index>(out.pixels());
  Matrix patches = Matrix::Zero(static_cast<Index>(in.channels * kTaps), batch * out_pixels);
  for (Index b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const Index row = static_cast<Index>(c * kTaps + ky * 3 + kx);
          for (std::size_t oy = 0; oy < out.height; ++oy) {
            const long iy = static_cast<long>(oy * layer.stride + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
            for (std::size_t ox = 0; ox < out.width; ++ox) {
              const long ix = static_cast<long>(ox * layer.stride + kx) - 1;
              if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
              const Index src = static_cast<Index>(c * in.pixels() +
                                                   static_cast<std::size_t>(iy) * in.width +
                                                   static_cast<std::size_t>(ix));
              patches(row, b * out_pixels + static_cast<Index>(oy * out.width + ox)) =
                  input(src, b);
            }
          }
        }
      }
    }
  }
  return patches;
}

void col2im_add(const LayerSpec& layer, const Matrix& columns, Matrix& grad_input) {
  const MapShape& in = layer.in_map;
  const MapShape& out = layer.out_map;
  const Index batch = grad_input.cols();
  const Index out_pixels = static_cast<Index>(out.pixels());
  for (Index b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const Index row = static_cast<Index>(c * kTaps + ky * 3 + kx);
          for (std::size_t oy = 0; oy < out.height; ++oy) {
            const long iy = static_cast<long>(oy * layer.stride + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
            for (std::size_t ox = 0; ox < out.width; ++ox) {
              const long ix = static_cast<long>(ox * layer.stride + kx) - 1;
              if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
              const Index dst = static_cast<Index>(c * in.pixels() +
                                                   static_cast<std::size_t>(iy) * in.width +
                                                   static_cast<std::size_t>(ix));
              grad_input(dst, b) +=
                  columns(row, b * out_pixels + static_cast<Index>(oy * out.width + ox));
            }
          }
        }
      }
    }
  }
}

// (C*P x B) column layout <-> (C x B*P) channel-row layout.
Matrix to_channel_rows(const Matrix& columns, std::size_t channels, std::size_t pixels) {
  const Index batch = columns.cols();
  const auto c_count = static_cast<Index>(channels);
  const auto p_count = static_cast<Index>(pixels);
  Matrix out(c_count, batch * p_count);
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < c_count; ++c)
      out.block(c, b * p_count, 1, p_count) =
          columns.block(c * p_count, b, p_count, 1).transpose();
  return out;
}

Matrix from_channel_rows(const Matrix& rows, std::size_t pixels) {
  const auto p_count = static_cast<Index>(pixels);
  const Index batch = rows.cols() / p_count;
  Matrix out(rows.rows() * p_count, batch);
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < rows.rows(); ++c)
      out.block(c * p_count, b, p_count, 1) = rows.block(c, b * p_count, 1, p_count).transpose();
  return out;
}

Matrix pool(const LayerSpec& layer, const Matrix& input) {
  const auto pixels = static_cast<Index>(layer.in_map.pixels());
  const auto channels = static_cast<Index>(layer.in_map.channels);
  Matrix pooled(channels, input.cols());
  for (Index b = 0; b < input.cols(); ++b)
    for (Index c = 0; c < channels; ++c)
      pooled(c, b) = input.block(c * pixels, b, pixels, 1).sum() / static_cast<double>(pixels);
  return pooled;
}

void check_input(const LayerSpec& layer, const Matrix& input) {
  if (static_cast<std::size_t>(input.rows()) != layer.in_dim)
    throw Error(ErrorKind::shape_mismatch, "layer expects " + std::to_string(layer.in_dim) +
                                               " inputs, got " + std::to_string(input.rows()));
}

}  // namespace

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in_dim = in;
  l.out_dim = out;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::conv2d(MapShape in, std::size_t out_channels, std::size_t stride,
                            Activation act) {
  if (stride == 0) throw Error(ErrorKind::invalid_spec, "conv stride must be positive");
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.in_map = in;
  l.out_map = {out_channels, conv_extent(in.height, stride), conv_extent(in.width, stride)};
  l.in_dim = in.size();
  l.out_dim = l.out_map.size();
  l.stride = stride;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::readout(MapShape in, std::size_t out, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::readout;
  l.in_map = in;
  l.in_dim = in.size();
  l.out_dim = out;
  l.activation = act;
  return l;
}

std::size_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::dense: return in_dim;
    case LayerKind::conv2d: return in_map.channels * kTaps;
    case LayerKind::readout: return in_map.channels;
  }
  return in_dim;
}

std::size_t LayerSpec::weight_rows() const {
  return kind == LayerKind::conv2d ? out_map.channels : out_dim;
}

std::size_t LayerSpec::weight_cols() const { return fan_in(); }

void NetworkSpec::validate() const {
  if (layers.empty()) throw Error(ErrorKind::invalid_spec, "network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& layer = layers[l];
    if (layer.in_dim == 0 || layer.out_dim == 0)
      throw Error(ErrorKind::invalid_spec, "layer " + std::to_string(l + 1) + " has zero extent");
    if (layer.kind != LayerKind::dense && layer.in_map.size() != layer.in_dim)
      throw Error(ErrorKind::invalid_spec, "layer map does not match its input size");
    if (l > 0 && layers[l - 1].out_dim != layer.in_dim)
      throw Error(ErrorKind::invalid_spec,
                  "layer " + std::to_string(l) + " output does not feed layer " +
                      std::to_string(l + 1));
    if (l > 0 && layer.kind != LayerKind::dense && layers[l - 1].kind == LayerKind::conv2d &&
        !(layers[l - 1].out_map == layer.in_map))
      throw Error(ErrorKind::invalid_spec, "feature map shapes do not compose");
  }
}

NetworkSpec NetworkSpec::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             std::size_t output_dim, Activation act) {
  NetworkSpec spec;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    spec.layers.push_back(LayerSpec::dense(in, width, act));
    in = width;
  }
  spec.layers.push_back(LayerSpec::dense(in, output_dim, Activation::identity));
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::cnn(MapShape input, std::size_t channels,
                             const std::vector<std::size_t>& strides, std::size_t output_dim,
                             Activation act) {
  NetworkSpec spec;
  MapShape map = input;
  for (std::size_t stride : strides) {
    spec.layers.push_back(LayerSpec::conv2d(map, channels, stride, act));
    map = spec.layers.back().out_map;
  }
  spec.layers.push_back(LayerSpec::readout(map, output_dim));
  spec.validate();
  return spec;
}

bool ParamSet::all_finite() const {
  for (const auto& w : weights)
    if (!w.allFinite()) return false;
  for (const auto& b : biases)
    if (!b.allFinite()) return false;
  return true;
}

Gradients Gradients::zeros(const NetworkSpec& spec) {
  Gradients g;
  for (const auto& layer : spec.layers) {
    g.weights.push_back(Matrix::Zero(static_cast<Index>(layer.weight_rows()),
                                     static_cast<Index>(layer.weight_cols())));
    g.biases.push_back(Vector::Zero(static_cast<Index>(layer.bias_size())));
  }
  return g;
}

ParamSet init_params(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet params;
  for (const auto& layer : spec.layers) {
    Matrix w(static_cast<Index>(layer.weight_rows()), static_cast<Index>(layer.weight_cols()));
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal();
    params.weights.push_back(std::move(w));
    params.biases.push_back(Vector::Zero(static_cast<Index>(layer.bias_size())));
  }
  return params;
}

Matrix layer_forward(const LayerSpec& layer, const Matrix& weight, const Vector& bias,
                     const Matrix& input) {
  check_input(layer, input);
  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
  switch (layer.kind) {
    case LayerKind::dense: {
      Matrix z = (weight * input) * scale;
      z.colwise() += bias;
      return z;
    }
    case LayerKind::conv2d: {
      Matrix rows = (weight * im2col(layer, input)) * scale;
      rows.colwise() += bias;
      return from_channel_rows(rows, layer.out_map.pixels());
    }
    case LayerKind::readout: {
      Matrix z = (weight * pool(layer, input)) * scale;
      z.colwise() += bias;
      return z;
    }
  }
  return {};
}

Matrix layer_backward_input(const LayerSpec& layer, const Matrix& weight, const Matrix& delta) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
  switch (layer.kind) {
    case LayerKind::dense: return (weight.transpose() * delta) * scale;
    case LayerKind::conv2d: {
      const Matrix rows = to_channel_rows(delta, layer.out_map.channels, layer.out_map.pixels());
      const Matrix columns = (weight.transpose() * rows) * scale;
      Matrix grad = Matrix::Zero(static_cast<Index>(layer.in_dim), delta.cols());
      col2im_add(layer, columns, grad);
      return grad;
    }
    case LayerKind::readout: {
      const auto pixels = static_cast<Index>(layer.in_map.pixels());
      const Matrix per_channel =
          (weight.transpose() * delta) * (scale / static_cast<double>(pixels));
      Matrix grad(static_cast<Index>(layer.in_dim), delta.cols());
      for (Index b = 0; b < delta.cols(); ++b)
        for (Index c = 0; c < per_channel.rows(); ++c)
          grad.block(c * pixels, b, pixels, 1).setConstant(per_channel(c, b));
      return grad;
    }
  }
  return {};
}

void layer_accumulate_grad(const LayerSpec& layer, const Matrix& delta, const Matrix& input,
                           Matrix& d_weight, Vector& d_bias) {
  check_input(layer, input);
  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
  switch (layer.kind) {
    case LayerKind::dense:
      d_weight.noalias() += (delta * input.transpose()) * scale;
      d_bias += delta.rowwise().sum();
      return;
    case LayerKind::conv2d: {
      const Matrix rows = to_channel_rows(delta, layer.out_map.channels, layer.out_map.pixels());
      d_weight.noalias() += (rows * im2col(layer, input).transpose()) * scale;
      d_bias += rows.rowwise().sum();
      return;
    }
    case LayerKind::readout:
      d_weight.noalias() += (delta * pool(layer, input).transpose()) * scale;
      d_bias += delta.rowwise().sum();
      return;
  }
}

ForwardTrace forward(const NetworkSpec& spec, const ParamSet& params, const Matrix& x) {
  if (params.weights.size() != spec.depth() || params.biases.size() != spec.depth())
    throw Error(ErrorKind::shape_mismatch, "parameter count does not match network depth");
  ForwardTrace trace;
  trace.pre.reserve(spec.depth());
  trace.post.reserve(spec.depth());
  trace.post.push_back(x);
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const LayerSpec& layer = spec.layers[l];
    trace.pre.push_back(layer_forward(layer, params.weights[l], params.biases[l], trace.post[l]));
    if (l + 1 < spec.depth()) trace.post.push_back(activate(layer.activation, trace.pre[l]));
  }
  if (!trace.output().allFinite())
    throw Error(ErrorKind::non_finite, "forward pass produced a non-finite output");
  return trace;
}

std::vector<Matrix> backward_deltas(const NetworkSpec& spec,
                                    std::span<const Matrix> backward_weights,
                                    const ForwardTrace& derivative_trace,
                                    const Matrix& output_error) {
  const std::size_t depth = spec.depth();
  std::vector<Matrix> deltas(depth);
  deltas[depth - 1] = output_error;
  for (std::size_t l = depth - 1; l-- > 0;) {
    const LayerSpec& next = spec.layers[l + 1];
    deltas[l] = layer_backward_input(next, backward_weights[l + 1], deltas[l + 1])
                    .cwiseProduct(activate_derivative(spec.layers[l].activation,
                                                      derivative_trace.pre[l]));
  }
  return deltas;
}

Gradients accumulate_gradients(const NetworkSpec& spec, std::span<const Matrix> deltas,
                               std::span<const Matrix> inputs, const std::vector<bool>& trained) {
  Gradients grads = Gradients::zeros(spec);
  const double inv_batch = 1.0 / static_cast<double>(deltas.back().cols());
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    if (!trained.empty() && !trained[l]) continue;
    layer_accumulate_grad(spec.layers[l], deltas[l], inputs[l], grads.weights[l],
                          grads.biases[l]);
    grads.weights[l] *= inv_batch;
    grads.biases[l] *= inv_batch;
  }
  return grads;
}

double squared_error_loss(const Matrix& f, const Matrix& y) {
  if (f.rows() != y.rows() || f.cols() != y.cols())
    throw Error(ErrorKind::shape_mismatch, "prediction and target shapes differ");
  return 0.5 * (f - y).squaredNorm() / static_cast<double>(f.cols());
}

Gradients backprop_grads(const NetworkSpec& spec, const ParamSet& params, const Matrix& x,
                         const Matrix& y) {
  if (x.cols() == 0) throw Error(ErrorKind::empty_input, "empty batch");
  const ForwardTrace trace = forward(spec, params, x);
  if (y.rows() != trace.output().rows() || y.cols() != x.cols())
    throw Error(ErrorKind::shape_mismatch, "targets do not match network output");
  const Matrix error = trace.output() - y;
  const auto deltas = backward_deltas(spec, params.weights, trace, error);
  return accumulate_gradients(spec, deltas, trace.post);
}

std::vector<Matrix> jacobians_for_example(const NetworkSpec& spec, const ParamSet& params,
                                          const Matrix& x_column) {
  const ForwardTrace trace = forward(spec, params, x_column);
  const auto outputs = static_cast<Index>(spec.output_dim());
  std::vector<Matrix> g(spec.depth());
  g[spec.depth() - 1] = Matrix::Identity(outputs, outputs);
  for (std::size_t l = spec.depth() - 1; l-- > 0;) {
    const Vector slope =
        activate_derivative(spec.layers[l].activation, trace.pre[l]).col(0);
    g[l] = slope.asDiagonal() * layer_backward_input(spec.layers[l + 1], params.weights[l + 1],
                                                     g[l + 1]);
  }
  return g;
}

}  // namespace alignlab
