#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "alignlab/error.hpp"
#include "alignlab/rules.hpp"
#include "alignlab/tasks.hpp"

using namespace alignlab;

namespace {

Matrix random_matrix(long rows, long cols, Rng& rng) {
  Matrix m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

Batch full_batch(const Matrix& x, const Matrix& y) {
  Batch b{x, y, {}};
  for (long i = 0; i < x.cols(); ++i) b.ids.push_back(static_cast<std::size_t>(i));
  return b;
}

// Straight-line cosine of two matrices via explicit traces.
double trace_cosine(const oracle::Mat& a, const oracle::Mat& b) {
  const std::size_t n = a.size();
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      ab += a[i][k] * b[k][i];
      aa += a[i][k] * a[k][i];
      bb += b[i][k] * b[k][i];
    }
  return ab / std::sqrt(aa * bb);
}

struct Monitored {
  NetworkSpec spec;
  ParamSet init;
  ParamSet final;
  CompanionState companion;
  ErrorLog log;
  double lr;
};

Monitored train_monitored(RuleKind rule, std::size_t width, std::size_t n, std::size_t steps,
                          double lr, std::uint64_t seed, double error_scale = 1.0) {
  Monitored out;
  out.spec = NetworkSpec::mlp(6, {width}, 3, Activation::tanh);
  Rng rng(seed);
  out.init = init_params(out.spec, rng);
  const Matrix x = random_matrix(6, static_cast<long>(n), rng);
  const Matrix y = error_scale * random_matrix(3, static_cast<long>(n), rng);
  const InitSnapshot snap = feedback_jacobians(out.init, out.spec, x);
  TrainState s{out.init, 0, CompanionState::from_init(out.init), Rng(1)};
  const RuleContext ctx{&snap, nullptr};
  const Batch batch = full_batch(x, y);
  out.log.dataset_size = n;
  for (std::size_t t = 0; t < steps; ++t) {
    Matrix e;
    rule_direction(rule, out.spec, s.params, ctx, batch, &e);
    out.log.steps.push_back({batch.ids, e});
    s = train_step(std::move(s), rule, out.spec, ctx, batch, lr);
  }
  out.final = s.params;
  out.companion = *s.companion;
  out.lr = lr;
  return out;
}

}  // namespace

TEST_CASE("dense score on constructed cases") {
  Rng rng(1);
  const Matrix a = random_matrix(5, 5, rng);
  const Matrix d = a.transpose() * a;
  CHECK(alignment_score_dense(d, 3.0 * d) == doctest::Approx(1.0).epsilon(1e-14));
  Matrix d1 = Matrix::Zero(2, 2), d2 = Matrix::Zero(2, 2);
  d1(0, 0) = 1;
  d2(1, 1) = 1;
  CHECK(alignment_score_dense(d1, d2) == 0.0);
  CHECK_THROWS_AS(alignment_score_dense(d1, Matrix::Zero(2, 2)), Error);

  const Matrix b1 = random_matrix(6, 6, rng), b2 = random_matrix(6, 6, rng);
  const Matrix p1 = b1 * b1.transpose(), p2 = b2 * b2.transpose();
  const double s = alignment_score_dense(p1, p2);
  CHECK(std::abs(s - trace_cosine(oracle::to_mat(p1), oracle::to_mat(p2))) < 1e-12);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0 + 1e-9);
}

TEST_CASE("correlation operators are symmetric and PSD") {
  const Monitored m = train_monitored(RuleKind::normal, 8, 10, 20, 0.2, 3);
  const auto delta = CorrelationOperator::delta(m.final, m.init, 0);
  const auto sigma = CorrelationOperator::sigma(m.companion, m.init, m.spec, 0);
  Rng rng(4);
  for (const auto* op : {&delta, &sigma}) {
    const Matrix z1 = random_matrix(static_cast<long>(op->dim()), 1, rng);
    const Matrix z2 = random_matrix(static_cast<long>(op->dim()), 1, rng);
    const double a = (z1.transpose() * op->apply(z2))(0, 0);
    const double b = (z2.transpose() * op->apply(z1))(0, 0);
    CHECK(std::abs(a - b) < 1e-10 * std::max(1.0, std::abs(a)));
    const Matrix probes = random_matrix(static_cast<long>(op->dim()), 1000, rng);
    const Matrix applied = op->apply(probes);
    for (long c = 0; c < 1000; ++c) CHECK(probes.col(c).dot(applied.col(c)) >= -1e-10);
  }
  CHECK(sigma.scale() == 6.0);
}

TEST_CASE("companion stays at init when errors are zero") {
  const auto spec = NetworkSpec::mlp(3, {4}, 2, Activation::tanh);
  Rng rng(5);
  const ParamSet init = init_params(spec, rng);
  const Matrix x = random_matrix(3, 4, rng);
  const InitSnapshot snap = feedback_jacobians(init, spec, x);
  CompanionState c = CompanionState::from_init(init);
  const std::vector<std::size_t> ids{0, 1, 2, 3};
  for (std::size_t t = 0; t < 5; ++t) c = companion_step(c, snap, ids, Matrix::Zero(2, 4), 0.3, t);
  for (std::size_t l = 0; l < spec.depth(); ++l) CHECK(c.weights[l] == init.weights[l]);
  const auto sigma = CorrelationOperator::sigma(c, init, spec, 0);
  CHECK(sigma.is_zero());
  CHECK_THROWS_AS(companion_step(c, snap, ids, Matrix::Zero(2, 4), 0.3, 7), Error);
}

TEST_CASE("companion under align-zero tracks the align-zero weights exactly") {
  const Monitored m = train_monitored(RuleKind::align_zero, 8, 10, 30, 0.2, 6);
  for (std::size_t l = 0; l < m.spec.depth(); ++l) CHECK(m.companion.weights[l] == m.final.weights[l]);
}

TEST_CASE("companion replays from logged errors under normal training") {
  const Monitored m = train_monitored(RuleKind::normal, 8, 10, 50, 0.2, 7);
  // Rebuild the init network and data from the seed.
  Rng rng(7);
  ParamSet init = init_params(m.spec, rng);
  const Matrix x = random_matrix(6, 10, rng);
  const auto trace0 = forward(m.spec, init, x);
  const InitSnapshot snap0 = feedback_jacobians(init, m.spec, x);
  for (std::size_t l = 0; l < m.spec.depth(); ++l) {
    Matrix acc = Matrix::Zero(init.weights[l].rows(), init.weights[l].cols());
    for (const auto& step : m.log.steps)
      for (long i = 0; i < 10; ++i)
        acc += snap0.jacobian(static_cast<std::size_t>(i), l) * step.errors.col(i) *
               trace0.post[l].col(i).transpose();
    const double fan = static_cast<double>(m.spec.layers[l].fan_in());
    const Matrix expected = -m.lr / std::sqrt(fan) / 10.0 * acc;
    CHECK(((m.companion.weights[l] - m.init.weights[l]) - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("two-route sigma identity") {
  const Monitored m = train_monitored(RuleKind::normal, 8, 20, 50, 0.2, 8);
  Rng rng(8);
  const ParamSet init = init_params(m.spec, rng);
  const Matrix x = random_matrix(6, 20, rng);
  const InitSnapshot snap = feedback_jacobians(init, m.spec, x);
  for (std::size_t l = 0; l < m.spec.depth(); ++l) {
    const OracleTensors o = oracle_sigma_dense(snap, m.log, l, m.lr);
    const Matrix companion = CorrelationOperator::sigma(m.companion, m.init, m.spec, l).dense();
    CHECK((o.sigma - companion).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((o.sigma - o.sigma.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((o.pair_weight - o.pair_weight.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((o.gamma(2, 5) - snap.jacobian(2, l).transpose() * snap.jacobian(5, l)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("oracle sigma: zero errors and the single-example case") {
  const auto spec = NetworkSpec::mlp(3, {5}, 2, Activation::tanh);
  Rng rng(9);
  const ParamSet init = init_params(spec, rng);
  const Matrix x = random_matrix(3, 1, rng);
  const InitSnapshot snap = feedback_jacobians(init, spec, x);
  ErrorLog zero{1, {{{0}, Matrix::Zero(2, 1)}}};
  const OracleTensors oz = oracle_sigma_dense(snap, zero, 0, 0.1);
  CHECK(oz.sigma.isZero(0.0));
  CHECK(oz.pair_weight.isZero(0.0));

  const Matrix e = random_matrix(2, 1, rng);
  ErrorLog one{1, {{{0}, e}}};
  const OracleTensors o = oracle_sigma_dense(snap, one, 0, 0.1);
  const Vector d = 0.1 * e.col(0);
  const Matrix g = snap.jacobian(0, 0);
  const double q = d.dot(g.transpose() * g * d);
  const Vector s0 = snap.activation(0, 0);
  CHECK((o.sigma - s0 * q * s0.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::FullPivLU<Matrix> lu(o.sigma);
  lu.setThreshold(1e-10);
  CHECK(lu.rank() <= 1);

  CompanionState c = CompanionState::from_init(init);
  c = companion_step(c, snap, std::vector<std::size_t>{0}, e, 0.1, 0);
  const Matrix comp = CorrelationOperator::sigma(c, init, spec, 0).dense();
  CHECK((o.sigma - comp).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("oracle rejects minibatch logs") {
  const auto spec = NetworkSpec::mlp(3, {4}, 2, Activation::tanh);
  Rng rng(10);
  const ParamSet init = init_params(spec, rng);
  const InitSnapshot snap = feedback_jacobians(init, spec, random_matrix(3, 4, rng));
  ErrorLog mini{4, {{{0, 1}, Matrix::Zero(2, 2)}}};
  CHECK_FALSE(mini.full_batch());
  CHECK_THROWS_AS(oracle_sigma_dense(snap, mini, 0, 0.1), Error);
}

TEST_CASE("stochastic score is exactly one when sigma equals delta") {
  const Monitored m = train_monitored(RuleKind::normal, 8, 10, 10, 0.2, 11);
  const auto delta = CorrelationOperator::delta(m.final, m.init, 0);
  Rng rng(1);
  for (std::size_t p : {1u, 3u, 50u}) {
    const AlignmentReport r = alignment_score_stochastic(delta, delta, p, rng);
    CHECK(r.score == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.probes == p);
  }
}

TEST_CASE("stochastic score converges to the dense score") {
  const Monitored m = train_monitored(RuleKind::normal, 32, 40, 100, 0.5, 12);
  const auto delta = CorrelationOperator::delta(m.final, m.init, 1);
  const auto sigma = CorrelationOperator::sigma(m.companion, m.init, m.spec, 1);
  const double dense = alignment_score_dense(delta, sigma);
  Rng rng(2);
  const AlignmentReport r = alignment_score_stochastic(delta, sigma, 2000, rng);
  CHECK(std::abs(r.score - dense) < 0.02);

  // a single probe has infinite jackknife variance
  Rng single(99);
  double previous = alignment_score_stochastic(delta, sigma, 1, single).variance;
  CHECK(std::isinf(previous));
  for (std::size_t p : {10u, 100u, 2000u}) {
    double mean_var = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      Rng probe_rng(100 + s);
      mean_var += alignment_score_stochastic(delta, sigma, p, probe_rng).variance / 10.0;
    }
    CHECK(mean_var < previous);
    previous = mean_var;
  }
}

TEST_CASE("stochastic score rejects zero operators and zero probes") {
  const auto spec = NetworkSpec::mlp(3, {4}, 2, Activation::tanh);
  Rng rng(13);
  const ParamSet init = init_params(spec, rng);
  const auto delta = CorrelationOperator::delta(init, init, 0);
  CHECK(delta.is_zero());
  CHECK_THROWS_AS(alignment_score_stochastic(delta, delta, 10, rng), Error);
  CHECK_THROWS_AS(alignment_score_dense(delta, delta), Error);
}

TEST_CASE("permuted baseline") {
  const Monitored m = train_monitored(RuleKind::normal, 8, 10, 20, 0.2, 14);
  const auto delta = CorrelationOperator::delta(m.final, m.init, 1);
  const auto sigma = CorrelationOperator::sigma(m.companion, m.init, m.spec, 1);
  Rng rng(3);
  CHECK(permuted_baseline(m.final, m.init, sigma, rng, true) == alignment_score_dense(delta, sigma));
  CHECK_THROWS_AS(permuted_baseline(m.init, m.init, sigma, rng), Error);
}

TEST_CASE("dense scoring is capped") {
  const Matrix c = Matrix::Ones(2, 600);
  const CorrelationOperator a(CorrelationRole::delta, 0, c, 1.0);
  CHECK_THROWS_AS(alignment_score_dense(a, a), Error);
  CHECK(alignment_score_dense(a, a, 1024) == doctest::Approx(1.0));
}
