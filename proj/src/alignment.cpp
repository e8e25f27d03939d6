#include "alignlab/alignment.hpp"

#include <cmath>
#include <string>

#include "alignlab/error.hpp"

namespace alignlab {

using Index = Eigen::Index;

CompanionState CompanionState::from_init(const ParamSet& init) {
  CompanionState c;
  c.weights = init.weights;
  c.step = 0;
  return c;
}

CompanionState companion_step(CompanionState companion, const InitSnapshot& snapshot,
                              std::span<const std::size_t> ids, const Matrix& errors,
                              double learning_rate, std::size_t monitored_step) {
  if (companion.step != monitored_step)
    throw Error(ErrorKind::step_mismatch,
                "companion at step " + std::to_string(companion.step) +
                    " but monitored trainer at step " + std::to_string(monitored_step));
  const NetworkSpec& spec = snapshot.spec();
  const FeedbackBatch fb = snapshot.project(ids, errors);
  const Gradients update = accumulate_gradients(spec, fb.deltas, fb.activations);
  for (std::size_t l = 0; l < spec.depth(); ++l)
    companion.weights[l] -= learning_rate * update.weights[l];
  ++companion.step;
  return companion;
}

CorrelationOperator::CorrelationOperator(CorrelationRole role, std::size_t layer, Matrix change,
                                         double scale)
    : role_(role), layer_(layer), change_(std::move(change)), scale_(scale) {}

CorrelationOperator CorrelationOperator::delta(const ParamSet& current, const ParamSet& init,
                                               std::size_t layer) {
  if (layer >= current.weights.size() || layer >= init.weights.size())
    throw Error(ErrorKind::shape_mismatch, "layer index out of range");
  return {CorrelationRole::delta, layer, current.weights[layer] - init.weights[layer], 1.0};
}

CorrelationOperator CorrelationOperator::sigma(const CompanionState& companion,
                                               const ParamSet& init, const NetworkSpec& spec,
                                               std::size_t layer) {
  if (layer >= spec.depth()) throw Error(ErrorKind::shape_mismatch, "layer index out of range");
  return {CorrelationRole::sigma, layer, companion.weights[layer] - init.weights[layer],
          static_cast<double>(spec.layers[layer].fan_in())};
}

bool CorrelationOperator::is_zero() const { return scale_ == 0.0 || change_.isZero(0.0); }

Matrix CorrelationOperator::apply(const Matrix& z) const {
  if (z.rows() != change_.cols())
    throw Error(ErrorKind::shape_mismatch, "probe dimension does not match operator");
  const Matrix inner = change_ * z;
  return (change_.transpose() * inner) * scale_;
}

Matrix CorrelationOperator::dense() const {
  return (change_.transpose() * change_) * scale_;
}

double alignment_score_dense(const Matrix& delta, const Matrix& sigma) {
  if (delta.rows() != sigma.rows() || delta.cols() != sigma.cols())
    throw Error(ErrorKind::shape_mismatch, "correlation matrices differ in shape");
  const double dd = delta.squaredNorm();
  const double ss = sigma.squaredNorm();
  if (dd == 0.0 || ss == 0.0)
    throw Error(ErrorKind::undefined_score, "a correlation matrix is identically zero");
  // tr(D S) = <D, S>_F for symmetric D.
  return delta.cwiseProduct(sigma).sum() / (std::sqrt(dd) * std::sqrt(ss));
}

double alignment_score_dense(const CorrelationOperator& delta, const CorrelationOperator& sigma,
                             std::size_t cap) {
  if (delta.dim() > cap || sigma.dim() > cap)
    throw Error(ErrorKind::unsupported, "operator wider than the dense cap of " +
                                            std::to_string(cap) + "; use the stochastic score");
  if (delta.is_zero() || sigma.is_zero())
    throw Error(ErrorKind::undefined_score, "a correlation operator is the zero map");
  return alignment_score_dense(delta.dense(), sigma.dense());
}

AlignmentReport alignment_score_stochastic(const CorrelationOperator& delta,
                                           const CorrelationOperator& sigma,
                                           std::size_t probes, Rng& rng) {
  if (probes == 0) throw Error(ErrorKind::empty_input, "at least one probe is required");
  if (delta.dim() != sigma.dim())
    throw Error(ErrorKind::shape_mismatch, "operators act on different spaces");
  if (delta.is_zero() || sigma.is_zero())
    throw Error(ErrorKind::undefined_score, "a correlation operator is the zero map");

  const auto dim = static_cast<Index>(delta.dim());
  const auto count = static_cast<Index>(probes);
  Matrix z(dim, count);
  for (Index p = 0; p < count; ++p)
    for (Index i = 0; i < dim; ++i) z(i, p) = rng.normal();
  const Matrix dz = delta.apply(z);
  const Matrix sz = sigma.apply(z);

  Vector cross(count), dnorm(count), snorm(count);
  for (Index p = 0; p < count; ++p) {
    cross(p) = dz.col(p).dot(sz.col(p));
    dnorm(p) = dz.col(p).squaredNorm();
    snorm(p) = sz.col(p).squaredNorm();
  }
  auto estimate = [](double c, double d, double s) { return c / std::sqrt(d * s); };
  const double sum_c = cross.sum(), sum_d = dnorm.sum(), sum_s = snorm.sum();

  AlignmentReport report;
  report.layer = delta.layer();
  report.probes = probes;
  report.score = estimate(sum_c, sum_d, sum_s);
  if (probes > 1) {
    Vector leave_out(count);
    for (Index p = 0; p < count; ++p)
      leave_out(p) = estimate(sum_c - cross(p), sum_d - dnorm(p), sum_s - snorm(p));
    const double mean = leave_out.mean();
    const double n = static_cast<double>(probes);
    report.variance = (n - 1.0) / n * (leave_out.array() - mean).square().sum();
  }
  return report;
}

bool ErrorLog::full_batch() const {
  for (const auto& entry : steps)
    if (entry.ids.size() != dataset_size) return false;
  return true;
}

const Matrix& OracleTensors::gamma(std::size_t i, std::size_t j) const {
  const auto n = static_cast<std::size_t>(integrated_error.cols());
  return kernel.at(i * n + j);
}

OracleTensors oracle_sigma_dense(const InitSnapshot& snapshot, const ErrorLog& log,
                                 std::size_t layer, double learning_rate) {
  const NetworkSpec& spec = snapshot.spec();
  if (layer >= spec.depth()) throw Error(ErrorKind::shape_mismatch, "layer index out of range");
  if (spec.layers[layer].kind != LayerKind::dense)
    throw Error(ErrorKind::unsupported, "the dense oracle covers dense layers only");
  if (log.dataset_size != snapshot.num_examples())
    throw Error(ErrorKind::shape_mismatch, "log and snapshot cover different datasets");
  if (!log.full_batch())
    throw Error(ErrorKind::unsupported,
                "oracle requires a full-batch log; minibatch weighting is ambiguous");

  const std::size_t n = log.dataset_size;
  const auto outputs = static_cast<Index>(spec.output_dim());
  OracleTensors out;
  out.integrated_error = Matrix::Zero(outputs, static_cast<Index>(n));
  for (const auto& entry : log.steps)
    for (std::size_t b = 0; b < entry.ids.size(); ++b)
      out.integrated_error.col(static_cast<Index>(entry.ids[b])) +=
          learning_rate * entry.errors.col(static_cast<Index>(b));

  std::vector<Matrix> g(n);
  Matrix acts(static_cast<Index>(spec.layers[layer].in_dim), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = snapshot.jacobian(i, layer);
    acts.col(static_cast<Index>(i)) = snapshot.activation(i, layer);
  }

  out.kernel.reserve(n * n);
  out.pair_weight.resize(static_cast<Index>(n), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Matrix gamma = g[i].transpose() * g[j];
      out.pair_weight(static_cast<Index>(i), static_cast<Index>(j)) =
          out.integrated_error.col(static_cast<Index>(i)).dot(
              gamma * out.integrated_error.col(static_cast<Index>(j)));
      out.kernel.push_back(std::move(gamma));
    }
  }

  const auto dim = acts.rows();
  out.sigma = Matrix::Zero(dim, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.sigma.noalias() += out.pair_weight(static_cast<Index>(i), static_cast<Index>(j)) *
                             acts.col(static_cast<Index>(i)) *
                             acts.col(static_cast<Index>(j)).transpose();
  out.sigma /= static_cast<double>(n) * static_cast<double>(n);
  return out;
}

double permuted_baseline(const ParamSet& current, const ParamSet& init,
                         const CorrelationOperator& sigma, Rng& rng, bool identity_permutation,
                         std::size_t cap) {
  const CorrelationOperator original = CorrelationOperator::delta(current, init, sigma.layer());
  Matrix shuffled = original.change();
  if (!identity_permutation) {
    const auto perm = rng.permutation(static_cast<std::size_t>(shuffled.size()));
    const Matrix& src = original.change();
    for (std::size_t i = 0; i < perm.size(); ++i)
      shuffled.data()[i] = src.data()[perm[i]];
  }
  const CorrelationOperator permuted(CorrelationRole::delta, sigma.layer(), std::move(shuffled),
                                     1.0);
  return alignment_score_dense(permuted, sigma, cap);
}

}  // namespace alignlab
