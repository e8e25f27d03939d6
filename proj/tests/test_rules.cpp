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

Batch make_batch(const Matrix& x, const Matrix& y) {
  Batch b{x, y, {}};
  for (long i = 0; i < x.cols(); ++i) b.ids.push_back(static_cast<std::size_t>(i));
  return b;
}

TrainState fresh_state(const ParamSet& p) { return TrainState{p, 0, std::nullopt, Rng(0)}; }

double max_diff(const ParamSet& a, const ParamSet& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    worst = std::max(worst, (a.weights[l] - b.weights[l]).cwiseAbs().maxCoeff());
    worst = std::max(worst, (a.biases[l] - b.biases[l]).cwiseAbs().maxCoeff());
  }
  return worst;
}

struct Fixture {
  NetworkSpec spec;
  ParamSet init;
  Matrix x, y;
  Fixture(NetworkSpec s, std::uint64_t seed, long n = 6) : spec(std::move(s)) {
    Rng rng(seed);
    init = init_params(spec, rng);
    x = random_matrix(static_cast<long>(spec.input_dim()), n, rng);
    y = random_matrix(static_cast<long>(spec.output_dim()), n, rng);
  }
};

}  // namespace

TEST_CASE("rule names round-trip") {
  for (auto r : {RuleKind::normal, RuleKind::align_zero, RuleKind::align_ada, RuleKind::fa,
                 RuleKind::dfa, RuleKind::last_layer, RuleKind::readout_only})
    CHECK(parse_rule(to_string(r)) == r);
  CHECK_THROWS_AS(parse_rule("sgd"), Error);
}

TEST_CASE("zero-error batches leave every rule's parameters unchanged") {
  Fixture f(NetworkSpec::mlp(4, {6, 5}, 3, Activation::tanh), 3);
  const Matrix y0 = forward(f.spec, f.init, f.x).output();
  const Batch batch = make_batch(f.x, y0);
  const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
  Rng fb_rng(9);
  const FixedFeedback fb = FixedFeedback::draw(f.spec, fb_rng);
  const RuleContext ctx{&snap, &fb};
  for (auto r : {RuleKind::normal, RuleKind::align_zero, RuleKind::align_ada, RuleKind::fa,
                 RuleKind::dfa, RuleKind::last_layer}) {
    const TrainState next = train_step(fresh_state(f.init), r, f.spec, ctx, batch, 0.5);
    CHECK(max_diff(next.params, f.init) == 0.0);
    CHECK(next.step == 1);
  }
}

TEST_CASE("normal step equals params minus lr times the finite-difference gradient") {
  Fixture f(NetworkSpec::mlp(3, {4}, 2, Activation::tanh), 5, 4);
  const double lr = 0.3;
  const TrainState next = step_normal(fresh_state(f.init), f.spec, make_batch(f.x, f.y), lr);
  for (std::size_t l = 0; l < f.spec.depth(); ++l)
    for (long i = 0; i < f.init.weights[l].size(); ++i) {
      auto loss_at = [&](double v) {
        ParamSet q = f.init;
        q.weights[l].data()[i] = v;
        return squared_error_loss(forward(f.spec, q, f.x).output(), f.y);
      };
      const double w0 = f.init.weights[l].data()[i];
      const double expected = w0 - lr * oracle::central_difference(loss_at, w0);
      CHECK(oracle::rel_error(next.params.weights[l].data()[i], expected) < 1e-5);
    }
}

TEST_CASE("first step of normal, align-zero and align-ada coincide") {
  for (auto act : {Activation::relu, Activation::tanh, Activation::erf}) {
    Fixture f(NetworkSpec::mlp(5, {7, 6}, 3, act), 11);
    const Batch batch = make_batch(f.x, f.y);
    const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
    const auto n = step_normal(fresh_state(f.init), f.spec, batch, 0.7);
    const auto z = step_align_zero(fresh_state(f.init), snap, f.spec, batch, 0.7);
    const auto a = step_align_ada(fresh_state(f.init), snap, f.spec, batch, 0.7);
    CHECK(max_diff(n.params, z.params) < 1e-12);
    CHECK(max_diff(n.params, a.params) < 1e-12);
  }
}

TEST_CASE("first-step equivalence holds for a CNN in both snapshot modes") {
  Fixture f(NetworkSpec::cnn({1, 6, 6}, 3, {1, 2}, 4, Activation::relu), 12, 3);
  const Batch batch = make_batch(f.x, f.y);
  const auto n = step_normal(fresh_state(f.init), f.spec, batch, 0.5);
  for (auto mode : {SnapshotMode::cached, SnapshotMode::recompute}) {
    const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x, mode);
    CHECK(max_diff(n.params, step_align_zero(fresh_state(f.init), snap, f.spec, batch, 0.5).params) < 1e-12);
    CHECK(max_diff(n.params, step_align_ada(fresh_state(f.init), snap, f.spec, batch, 0.5).params) < 1e-12);
  }
}

TEST_CASE("depth-1 identity network: align rules equal normal at every step") {
  Fixture f(NetworkSpec::mlp(4, {}, 3, Activation::identity), 13, 5);
  const Batch batch = make_batch(f.x, f.y);
  const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
  TrainState n = fresh_state(f.init), z = n, a = n;
  for (int t = 0; t < 20; ++t) {
    n = step_normal(std::move(n), f.spec, batch, 0.2);
    z = step_align_zero(std::move(z), snap, f.spec, batch, 0.2);
    a = step_align_ada(std::move(a), snap, f.spec, batch, 0.2);
  }
  CHECK(max_diff(n.params, z.params) < 1e-12);
  CHECK(max_diff(n.params, a.params) < 1e-12);
}

TEST_CASE("align-zero replays as a linear function of the recorded errors") {
  Fixture f(NetworkSpec::mlp(4, {8}, 3, Activation::relu), 17, 10);
  const Batch batch = make_batch(f.x, f.y);
  const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
  const RuleContext ctx{&snap, nullptr};
  const double lr = 0.1;
  TrainState s = fresh_state(f.init);
  std::vector<Matrix> errors;
  for (int t = 0; t < 50; ++t) {
    Matrix e;
    rule_direction(RuleKind::align_zero, f.spec, s.params, ctx, batch, &e);
    errors.push_back(e);
    s = step_align_zero(std::move(s), snap, f.spec, batch, lr);
  }
  // Replay: W - W0 = -(lr / sqrt(m)) sum_t mean_x g(x) e_t(x) sigma0(x)^T, built
  // from explicit per-example products.
  const auto trace0 = forward(f.spec, f.init, f.x);
  for (double factor : {1.0, 2.0}) {
    for (std::size_t l = 0; l < f.spec.depth(); ++l) {
      Matrix acc = Matrix::Zero(f.init.weights[l].rows(), f.init.weights[l].cols());
      Vector bacc = Vector::Zero(f.init.biases[l].size());
      for (const Matrix& e : errors)
        for (long i = 0; i < f.x.cols(); ++i) {
          const Vector ge = snap.jacobian(static_cast<std::size_t>(i), l) * (factor * e.col(i));
          acc += ge * trace0.post[l].col(i).transpose();
          bacc += ge;
        }
      const double n = static_cast<double>(f.x.cols());
      const double fan = static_cast<double>(f.spec.layers[l].fan_in());
      const Matrix replay_change = -lr / std::sqrt(fan) / n * acc;
      const Matrix actual_change = s.params.weights[l] - f.init.weights[l];
      CHECK((factor * actual_change - replay_change).cwiseAbs().maxCoeff() < 1e-10 * factor);
      CHECK((factor * (s.params.biases[l] - f.init.biases[l]) + lr / n * bacc).cwiseAbs().maxCoeff() <
            1e-10 * factor);
    }
  }
}

TEST_CASE("align-ada and align-zero diverge from each other after 50 steps") {
  Fixture f(NetworkSpec::mlp(4, {8}, 3, Activation::relu), 19, 10);
  const Batch batch = make_batch(f.x, f.y);
  const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
  TrainState z = fresh_state(f.init), a = z;
  for (int t = 0; t < 50; ++t) {
    z = step_align_zero(std::move(z), snap, f.spec, batch, 0.2);
    a = step_align_ada(std::move(a), snap, f.spec, batch, 0.2);
  }
  CHECK(max_diff(z.params, a.params) > 1e-6);
  CHECK(max_diff(z.params, f.init) > 1e-3);
  CHECK(max_diff(a.params, f.init) > 1e-3);
}

TEST_CASE("align rules reject examples outside the snapshot") {
  Fixture f(NetworkSpec::mlp(3, {4}, 2, Activation::tanh), 23, 4);
  const InitSnapshot snap = feedback_jacobians(f.init, f.spec, f.x);
  Batch batch = make_batch(f.x, f.y);
  batch.ids[2] = 99;
  try {
    step_align_zero(fresh_state(f.init), snap, f.spec, batch, 0.1);
    FAIL("expected missing example");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::missing_example);
  }
}

TEST_CASE("FA with transported weights reduces to normal") {
  Fixture f(NetworkSpec::mlp(4, {6, 5}, 3, Activation::tanh), 29);
  const Batch batch = make_batch(f.x, f.y);
  TrainState n = fresh_state(f.init), fa = n;
  for (int t = 0; t < 5; ++t) {
    FixedFeedback fb;
    fb.backward = fa.params.weights;
    n = step_normal(std::move(n), f.spec, batch, 0.3);
    fa = step_fa(std::move(fa), fb, f.spec, batch, 0.3);
  }
  CHECK(max_diff(n.params, fa.params) < 1e-12);
}

TEST_CASE("DFA and frozen-body final-layer updates equal normal's") {
  Fixture f(NetworkSpec::mlp(4, {6, 5}, 3, Activation::tanh), 31);
  const Batch batch = make_batch(f.x, f.y);
  Rng rng(2);
  const FixedFeedback fb = FixedFeedback::draw(f.spec, rng);
  const auto n = step_normal(fresh_state(f.init), f.spec, batch, 0.4);
  const auto d = step_dfa(fresh_state(f.init), fb, f.spec, batch, 0.4);
  const auto r = step_frozen_body(fresh_state(f.init), f.spec, batch, 0.4);
  const std::size_t last = f.spec.depth() - 1;
  CHECK((n.params.weights[last] - d.params.weights[last]).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((n.params.weights[last] - r.params.weights[last]).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((n.params.biases[last] - r.params.biases[last]).cwiseAbs().maxCoeff() < 1e-14);
  for (std::size_t l = 0; l < last; ++l) {
    CHECK(r.params.weights[l] == f.init.weights[l]);
    CHECK(r.params.biases[l] == f.init.biases[l]);
  }
  CHECK(fb.direct[last] == Matrix::Identity(3, 3));
}

TEST_CASE("fixed feedback scales like the forward weights") {
  const auto spec = NetworkSpec::mlp(20, {400, 100}, 10, Activation::relu);
  Rng rng(4);
  const FixedFeedback fb = FixedFeedback::draw(spec, rng);
  // entry variance 1/m_l for the direct matrices, 1 for the backward ones
  for (std::size_t l = 0; l < 2; ++l) {
    const double m = static_cast<double>(spec.layers[l].out_dim);
    const double var = fb.direct[l].squaredNorm() / static_cast<double>(fb.direct[l].size());
    CHECK(var * m == doctest::Approx(1.0).epsilon(0.1));
    CHECK(fb.backward[l].squaredNorm() / static_cast<double>(fb.backward[l].size()) ==
          doctest::Approx(1.0).epsilon(0.1));
  }
}

namespace {

double train_and_ratio(RuleKind rule, std::size_t width, std::size_t steps, double lr,
                       double* accuracy_out = nullptr) {
  Rng data_rng(101);
  const ClassificationSet data = gen_synthetic_classification(200, 16, 4, 3.0, data_rng);
  const auto spec = NetworkSpec::mlp(16, {width, width}, 4, Activation::relu);
  Rng rng(7);
  TrainState s{init_params(spec, rng), 0, std::nullopt, Rng(8)};
  const FixedFeedback fb = FixedFeedback::draw(spec, s.rng);
  const Batch batch = make_batch(data.inputs, data.targets);
  const RuleContext ctx{nullptr, &fb};
  const double before = squared_error_loss(forward(spec, s.params, data.inputs).output(), data.targets);
  for (std::size_t t = 0; t < steps; ++t) s = train_step(std::move(s), rule, spec, ctx, batch, lr);
  const Matrix out = forward(spec, s.params, data.inputs).output();
  if (accuracy_out) *accuracy_out = accuracy(out, data.labels);
  return squared_error_loss(out, data.targets) / before;
}

}  // namespace

TEST_CASE("FA and DFA halve the loss on a separable task") {
  CHECK(train_and_ratio(RuleKind::fa, 8, 100, 0.5) < 0.5);
  CHECK(train_and_ratio(RuleKind::dfa, 8, 100, 0.5) < 0.5);
}

TEST_CASE("wide random features with a trained readout beat chance") {
  double acc = 0.0;
  train_and_ratio(RuleKind::last_layer, 512, 100, 0.5, &acc);
  CHECK(acc > 0.25);
}

TEST_CASE("epoch batches partition the dataset") {
  Rng rng(3);
  const auto batches = epoch_batches(23, 5, rng);
  REQUIRE(batches.size() == 5);
  CHECK(batches.back().size() == 3);
  std::vector<int> seen(23, 0);
  for (const auto& b : batches)
    for (auto id : b) ++seen[id];
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("train_step rejects a step mismatch and a companion without snapshot") {
  Fixture f(NetworkSpec::mlp(3, {4}, 2, Activation::tanh), 37, 4);
  TrainState s = fresh_state(f.init);
  s.step = 2;
  CHECK_THROWS_AS(train_step(s, RuleKind::normal, f.spec, {}, make_batch(f.x, f.y), 0.1), Error);
  TrainState c = fresh_state(f.init);
  c.companion = CompanionState::from_init(f.init);
  CHECK_THROWS_AS(train_step(c, RuleKind::normal, f.spec, {}, make_batch(f.x, f.y), 0.1), Error);
}
