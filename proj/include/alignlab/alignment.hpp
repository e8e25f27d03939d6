#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "alignlab/feedback.hpp"
#include "alignlab/network.hpp"
#include "alignlab/rng.hpp"

namespace alignlab {

/// Companion weights W*_l driven by frozen g_l(x), frozen sigma(z^(0)(x)),
/// and the output errors of a monitored network. W*_l - W_l^(0) accumulates
/// the integrated error, so m_{l-1} (W* - W^(0))^T (W* - W^(0)) is the
/// error-weighted input correlation of layer l.
struct CompanionState {
  std::vector<Matrix> weights;
  std::size_t step = 0;

  static CompanionState from_init(const ParamSet& init);
};

/// Advances the companion by one monitored step. `errors` are the monitored
/// network's output errors for the batch `ids`; `monitored_step` is the
/// monitored trainer's step count before its update.
CompanionState companion_step(CompanionState companion, const InitSnapshot& snapshot,
                              std::span<const std::size_t> ids, const Matrix& errors,
                              double learning_rate, std::size_t monitored_step);

enum class CorrelationRole { delta, sigma };

/// Matrix-free symmetric PSD map z -> scale * C^T (C z) for a weight change C.
class CorrelationOperator {
 public:
  CorrelationOperator(CorrelationRole role, std::size_t layer, Matrix change, double scale);

  /// (W^(t) - W^(0))^T (W^(t) - W^(0)).
  static CorrelationOperator delta(const ParamSet& current, const ParamSet& init,
                                   std::size_t layer);
  /// m_{l-1} (W* - W^(0))^T (W* - W^(0)).
  static CorrelationOperator sigma(const CompanionState& companion, const ParamSet& init,
                                   const NetworkSpec& spec, std::size_t layer);

  CorrelationRole role() const { return role_; }
  std::size_t layer() const { return layer_; }
  std::size_t dim() const { return static_cast<std::size_t>(change_.cols()); }
  const Matrix& change() const { return change_; }
  double scale() const { return scale_; }
  bool is_zero() const;

  Matrix apply(const Matrix& z) const;
  Matrix dense() const;

 private:
  CorrelationRole role_;
  std::size_t layer_;
  Matrix change_;
  double scale_;
};

inline constexpr std::size_t kDenseCap = 512;

/// Cosine between symmetric matrices: tr(D S) / sqrt(tr(D^2) tr(S^2)).
/// Throws undefined_score when either matrix is zero.
double alignment_score_dense(const Matrix& delta, const Matrix& sigma);
/// Materializes both operators; throws unsupported above `cap` columns.
double alignment_score_dense(const CorrelationOperator& delta, const CorrelationOperator& sigma,
                             std::size_t cap = kDenseCap);

struct AlignmentReport {
  std::size_t layer = 0;
  double score = 0.0;
  std::size_t probes = 0;
  /// Jackknife variance over probes; infinite for a single probe.
  double variance = std::numeric_limits<double>::infinity();
};

/// Gaussian-probe estimate mean[z' D S z] / sqrt(mean|D z|^2 mean|S z|^2)
/// with one probe set shared by all three averages.
AlignmentReport alignment_score_stochastic(const CorrelationOperator& delta,
                                           const CorrelationOperator& sigma,
                                           std::size_t probes, Rng& rng);

/// Output errors of every training step, in order.
struct ErrorLog {
  struct Entry {
    std::vector<std::size_t> ids;
    Matrix errors;
  };
  std::size_t dataset_size = 0;
  std::vector<Entry> steps;

  bool full_batch() const;
};

/// Brute-force error-weighted correlation for one layer.
struct OracleTensors {
  /// delta(x) = lr * sum_t e_t(x), one column per example.
  Matrix integrated_error;
  /// Gamma_l(x_i, x_j) = g_l(x_i)^T g_l(x_j), row-major over (i, j).
  std::vector<Matrix> kernel;
  /// q_l(x_i, x_j) = delta_i^T Gamma_l(x_i, x_j) delta_j.
  Matrix pair_weight;
  /// E_{x1,x2}[sigma(z(x1)) q(x1, x2) sigma(z(x2))^T].
  Matrix sigma;

  const Matrix& gamma(std::size_t i, std::size_t j) const;
};

/// Requires a full-batch log: every step's batch is the whole training set.
OracleTensors oracle_sigma_dense(const InitSnapshot& snapshot, const ErrorLog& log,
                                 std::size_t layer, double learning_rate);

/// Score after shuffling the entries of W^(t) - W^(0) for the sigma
/// operator's layer. `identity_permutation` skips the shuffle.
double permuted_baseline(const ParamSet& current, const ParamSet& init,
                         const CorrelationOperator& sigma, Rng& rng,
                         bool identity_permutation = false, std::size_t cap = kDenseCap);

}  // namespace alignlab
