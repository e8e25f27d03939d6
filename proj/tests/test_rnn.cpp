#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "alignlab/error.hpp"
#include "alignlab/rules.hpp"
#include "alignlab/tasks.hpp"

using namespace alignlab;

namespace {

std::vector<Matrix> column_sequence(const std::vector<double>& xs) {
  std::vector<Matrix> out;
  for (double v : xs) out.push_back(Matrix::Constant(1, 1, v));
  return out;
}

SequenceBatch random_batch(std::size_t length, std::size_t batch, Rng& rng) {
  SequenceBatch b;
  for (std::size_t k = 0; k < length; ++k) {
    Matrix x(1, static_cast<long>(batch)), y(1, static_cast<long>(batch));
    for (std::size_t i = 0; i < batch; ++i) {
      x(0, static_cast<long>(i)) = rng.normal();
      y(0, static_cast<long>(i)) = rng.normal();
    }
    b.inputs.push_back(x);
    b.targets.push_back(y);
  }
  for (std::size_t i = 0; i < batch; ++i) b.ids.push_back(i);
  return b;
}

void randomize_biases(RnnParams& p, Rng& rng) {
  for (long i = 0; i < p.b_hidden.size(); ++i) p.b_hidden(i) = 0.3 * rng.normal();
  for (long i = 0; i < p.b_output.size(); ++i) p.b_output(i) = 0.3 * rng.normal();
}

double batch_loss(const RnnSpec& spec, const RnnParams& p, const SequenceBatch& b) {
  // 0.5 * sum_k ||yhat_k - y_k||^2, batch mean: the objective BPTT differentiates.
  const RnnTrace t = rnn_unroll(spec, p, b.inputs);
  double acc = 0.0;
  for (std::size_t k = 0; k < b.length(); ++k) acc += 0.5 * (t.predictions[k] - b.targets[k]).squaredNorm();
  return acc / static_cast<double>(b.size());
}

std::vector<Matrix*> param_blocks(RnnParams& p) {
  return {&p.w_hidden, &p.w_input, &p.w_output};
}

}  // namespace

TEST_CASE("rnn constant predictor") {
  RnnSpec spec{1, 5, 1, Activation::tanh};
  Rng rng(1);
  RnnParams p = init_rnn_params(spec, rng);
  p.w_hidden.setZero();
  p.w_input.setZero();
  p.b_output(0) = 0.7;
  const RnnTrace t = rnn_unroll(spec, p, column_sequence({1, 0, 1, 1}));
  for (const Matrix& y : t.predictions) CHECK(y(0, 0) == 0.7);
}

TEST_CASE("rnn scalar recurrence") {
  RnnSpec spec{1, 1, 1, Activation::identity};
  RnnParams p = zero_rnn_gradients(spec);
  p.w_hidden(0, 0) = 1.0;
  p.w_input(0, 0) = 1.0;
  const RnnTrace t = rnn_unroll(spec, p, column_sequence({1, 0}));
  CHECK(t.states[0](0, 0) == 0.0);
  CHECK(t.states[1](0, 0) == 1.0);
  CHECK(t.states[2](0, 0) == 1.0);
}

TEST_CASE("rnn unroll matches a straight-line evaluation") {
  RnnSpec spec{1, 8, 1, Activation::relu};
  Rng rng(2);
  RnnParams p = init_rnn_params(spec, rng);
  randomize_biases(p, rng);
  std::vector<double> xs;
  for (int k = 0; k < 12; ++k) xs.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
  const RnnTrace t = rnn_unroll(spec, p, column_sequence(xs));
  const oracle::RnnRun ref = oracle::rnn_forward(spec, p, xs);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    CHECK(std::abs(t.predictions[k](0, 0) - ref.predictions[k]) < 1e-12);
    for (std::size_t i = 0; i < spec.hidden; ++i)
      CHECK(std::abs(t.states[k + 1](static_cast<long>(i), 0) - ref.states[k + 1][i]) < 1e-12);
  }
}

TEST_CASE("rnn unroll rejects shape errors") {
  RnnSpec spec{1, 4, 1, Activation::tanh};
  Rng rng(3);
  const RnnParams p = init_rnn_params(spec, rng);
  CHECK_THROWS_AS(rnn_unroll(spec, p, std::vector<Matrix>{}), Error);
  CHECK_THROWS_AS(rnn_unroll(spec, p, std::vector<Matrix>{Matrix::Zero(2, 1)}), Error);
}

TEST_CASE("bptt matches finite differences") {
  for (auto act : {Activation::tanh, Activation::erf}) {
    RnnSpec spec{1, 2, 1, act};
    Rng rng(5);
    RnnParams p = init_rnn_params(spec, rng);
    randomize_biases(p, rng);
    const SequenceBatch batch = random_batch(3, 4, rng);
    const RnnGradients g = bptt_grads(spec, p, batch);
    double worst = 0.0;
    RnnGradients gcopy = g;
    const auto blocks = param_blocks(p);
    const auto gblocks = param_blocks(gcopy);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (long i = 0; i < blocks[b]->size(); ++i) {
        auto f = [&](double v) {
          RnnParams q = p;
          param_blocks(q)[b]->data()[i] = v;
          return batch_loss(spec, q, batch);
        };
        const double num = oracle::central_difference(f, blocks[b]->data()[i]);
        worst = std::max(worst, oracle::rel_error(gblocks[b]->data()[i], num));
      }
    for (long i = 0; i < p.b_hidden.size(); ++i) {
      auto f = [&](double v) {
        RnnParams q = p;
        q.b_hidden(i) = v;
        return batch_loss(spec, q, batch);
      };
      worst = std::max(worst, oracle::rel_error(g.b_hidden(i), oracle::central_difference(f, p.b_hidden(i))));
    }
    auto fo = [&](double v) {
      RnnParams q = p;
      q.b_output(0) = v;
      return batch_loss(spec, q, batch);
    };
    worst = std::max(worst, oracle::rel_error(g.b_output(0), oracle::central_difference(fo, p.b_output(0))));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("rnn zero-error batches give no update for every supported rule") {
  RnnSpec spec{1, 6, 1, Activation::tanh};
  Rng rng(7);
  const RnnParams p = init_rnn_params(spec, rng);
  SequenceBatch batch = random_batch(5, 3, rng);
  const RnnTrace t = rnn_unroll(spec, p, batch.inputs);
  batch.targets = t.predictions;
  const RnnSnapshot snap(spec, p, batch.inputs);
  for (auto rule : {RuleKind::normal, RuleKind::align_zero, RuleKind::align_ada, RuleKind::readout_only}) {
    const RnnTrainState next = step_rnn({p, 0, Rng(1)}, rule, spec, {&snap, 0}, batch, 0.1);
    CHECK(next.params.w_hidden == p.w_hidden);
    CHECK(next.params.w_output == p.w_output);
    CHECK(next.params.b_hidden == p.b_hidden);
  }
}

TEST_CASE("first recurrent align step equals the bptt step") {
  RnnSpec spec{1, 7, 1, Activation::relu};
  Rng rng(11);
  const RnnParams p = init_rnn_params(spec, rng);
  const SequenceBatch batch = random_batch(9, 4, rng);
  const RnnSnapshot snap(spec, p, batch.inputs);
  const RnnTrainState n = step_rnn({p, 0, Rng(1)}, RuleKind::normal, spec, {&snap, 0}, batch, 0.05);
  for (auto rule : {RuleKind::align_zero, RuleKind::align_ada}) {
    const RnnTrainState a = step_rnn({p, 0, Rng(1)}, rule, spec, {&snap, 0}, batch, 0.05);
    CHECK((a.params.w_hidden - n.params.w_hidden).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.params.w_input - n.params.w_input).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.params.w_output - n.params.w_output).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.params.b_hidden - n.params.b_hidden).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("recurrent align-ada tied-weight sum matches a pairwise oracle") {
  RnnSpec spec{1, 2, 1, Activation::tanh};
  Rng rng(13);
  const RnnParams init = init_rnn_params(spec, rng);
  RnnParams current = init;
  current.w_hidden += 0.2 * Matrix::Random(2, 2);
  current.w_output += 0.2 * Matrix::Random(1, 2);
  const SequenceBatch batch = random_batch(3, 5, rng);
  const RnnSnapshot snap(spec, init, batch.inputs);
  for (std::size_t window : {0u, 1u}) {
    const RnnGradients d =
        rnn_rule_direction(RuleKind::align_ada, spec, current, {&snap, window}, batch);
    const Matrix ref = oracle::rnn_pairwise_w_hidden(spec, init, current, batch, window);
    CHECK((d.w_hidden - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("recurrent rules need a snapshot and reject FA") {
  RnnSpec spec{1, 3, 1, Activation::tanh};
  Rng rng(17);
  const RnnParams p = init_rnn_params(spec, rng);
  const SequenceBatch batch = random_batch(4, 2, rng);
  try {
    rnn_rule_direction(RuleKind::align_zero, spec, p, {}, batch);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_config);
  }
  const RnnSnapshot snap(spec, p, batch.inputs);
  CHECK_THROWS_AS(rnn_rule_direction(RuleKind::fa, spec, p, {&snap, 0}, batch), Error);
}

TEST_CASE("readout-only trains W_o and b_o only") {
  RnnSpec spec{1, 5, 1, Activation::relu};
  Rng rng(19);
  const RnnParams p = init_rnn_params(spec, rng);
  const SequenceBatch batch = random_batch(6, 3, rng);
  const RnnTrainState r = step_rnn({p, 0, Rng(1)}, RuleKind::readout_only, spec, {}, batch, 0.1);
  const RnnTrainState n = step_rnn({p, 0, Rng(1)}, RuleKind::normal, spec, {}, batch, 0.1);
  CHECK(r.params.w_hidden == p.w_hidden);
  CHECK(r.params.w_input == p.w_input);
  CHECK(r.params.b_hidden == p.b_hidden);
  CHECK((r.params.w_output - n.params.w_output).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(r.params.w_output != p.w_output);
}

TEST_CASE("recomputed recurrent snapshot equals the cached one") {
  RnnSpec spec{1, 4, 1, Activation::tanh};
  Rng rng(23);
  const RnnParams p = init_rnn_params(spec, rng);
  const SequenceBatch batch = random_batch(5, 6, rng);
  const RnnSnapshot a(spec, p, batch.inputs, SnapshotMode::cached);
  const RnnSnapshot b(spec, p, batch.inputs, SnapshotMode::recompute);
  const std::vector<std::size_t> ids{4, 1, 3};
  const RnnTrace ta = a.trace(ids), tb = b.trace(ids);
  for (std::size_t k = 0; k < ta.states.size(); ++k) CHECK(ta.states[k] == tb.states[k]);
}
