#include <doctest.h>

#include "fsam/prompt_gen.hpp"
#include "oracles.hpp"

using namespace fsam;

namespace {

Mat random_mat(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> n(0.0, scale);
  return Mat::NullaryExpr(r, c, [&]() { return n(rng); });
}

TokenGrid grid(const Mat& tokens, Index rows, Index cols) { return TokenGrid{tokens, rows, cols}; }

}  // namespace

TEST_CASE("instance_prototype: identical tokens, single token, pooling oracle") {
  const RowVec v = random_mat(1, 5, 1);
  CHECK(instance_prototype(grid(v.replicate(6, 1), 2, 3)).p.isApprox(2.0 * v, 1e-14));
  CHECK(instance_prototype(grid(v, 1, 1)).p.isApprox(2.0 * v, 1e-14));

  const Mat e = random_mat(12, 5, 2);
  const RowVec p = instance_prototype(grid(e, 3, 4)).p;
  for (Index c = 0; c < 5; ++c) {
    double sum = 0.0, mx = -1e300;
    for (Index t = 0; t < 12; ++t) {
      sum += e(t, c);
      mx = std::max(mx, e(t, c));
    }
    CHECK(std::abs(p(c) - (sum / 12.0 + mx)) < 1e-12);
  }
  CHECK_THROWS_AS(instance_prototype(grid(Mat(0, 5), 0, 0)), Error);
}

TEST_CASE("similarity: orthogonal rows, scale invariance, dot/norm oracle, zero norms") {
  const Mat bank = Mat::Identity(3, 3) * 2.0;
  const RowVec s = similarity(bank.row(1), bank);
  CHECK(s(0) == 0.0);
  CHECK(s(1) == doctest::Approx(1.0));
  CHECK(s(2) == 0.0);

  const Mat m = random_mat(3, 5, 3);
  const RowVec p = random_mat(1, 5, 4);
  const RowVec base = similarity(p, m);
  CHECK((similarity(3.7 * p, m) - base).cwiseAbs().maxCoeff() < 1e-12);
  for (Index j = 0; j < 3; ++j) CHECK(std::abs(base(j) - oracle::cosine(p, m.row(j))) < 1e-12);

  try {
    (void)similarity(RowVec::Zero(5), m);
    FAIL("expected zero-norm");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroNorm);
  }
  Mat holed = m;
  holed.row(1).setZero();
  CHECK_THROWS_AS(similarity(p, holed), Error);
}

TEST_CASE("refine: single row, uniform weights, explicit oracle") {
  const Mat one = random_mat(1, 4, 5);
  const RefinedPrototype r1 = refine(RowVec::Constant(1, 0.3), one);
  CHECK(r1.alpha(0) == 1.0);
  CHECK(r1.p_hat == RowVec(one.row(0)));

  const Mat m = random_mat(4, 6, 6);
  const RefinedPrototype ru = refine(RowVec::Constant(4, 0.2), m);
  CHECK((ru.alpha.array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK((ru.p_hat - m.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  const RowVec s = random_mat(1, 4, 7);
  const RefinedPrototype r = refine(s, m);
  double z = 0.0;
  for (Index j = 0; j < 4; ++j) z += std::exp(s(j));
  RowVec expect = RowVec::Zero(6);
  for (Index j = 0; j < 4; ++j) {
    CHECK(std::abs(r.alpha(j) - std::exp(s(j)) / z) < 1e-12);
    expect += std::exp(s(j)) / z * m.row(j);
  }
  CHECK((r.p_hat - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("activation_map: aligned, opposite, per-token oracle, zero tokens") {
  const RowVec ph = random_mat(1, 4, 8);
  CHECK((activation_map(ph, grid(ph.replicate(6, 1), 2, 3)).values.array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((activation_map(ph, grid((-ph).replicate(6, 1), 3, 2)).values.array() + 1.0).abs().maxCoeff() < 1e-12);

  Mat e = random_mat(6, 4, 9);
  e.row(4).setZero();
  const ActivationMap a = activation_map(ph, grid(e, 2, 3));
  for (Index t = 0; t < 6; ++t) {
    const double expect = t == 4 ? 0.0 : oracle::cosine(ph, e.row(t));
    CHECK(std::abs(a.values(t / 3, t % 3) - expect) < 1e-12);
  }
  CHECK(a.as_tokens()(5) == a.values(1, 2));
  CHECK_THROWS_AS(activation_map(RowVec::Zero(4), grid(e, 2, 3)), Error);
}

TEST_CASE("make_prompt: zero weights give the bias, shape, per-pixel oracle") {
  const Index c = 16;
  ParameterStore store;
  const PromptGenerator gen = build_prompt_generator(store, c, 8, 0);
  const TokenGrid e = grid(random_mat(64, c, 10), 8, 8);
  const RowVec ph = random_mat(1, c, 11);
  const ActivationMap a = activation_map(ph, e);

  const TokenGrid p = make_prompt(ph, e, a, gen.head);
  CHECK(p.rows == 8);
  CHECK(p.cols == 8);
  CHECK(p.width() == c);

  const Mat& w = gen.head.weight->value;
  store.at("prompt.head.bias").value = random_mat(1, c, 12);
  const Mat& b = gen.head.bias->value;
  const TokenGrid p2 = make_prompt(ph, e, a, gen.head);
  for (Index t = 0; t < 64; t += 7) {
    Eigen::RowVectorXd in(2 * c + 1);
    for (Index i = 0; i < c; ++i) {
      in(i) = ph(i);
      in(c + i) = e.tokens(t, i);
    }
    in(2 * c) = a.values(t / 8, t % 8);
    for (Index o = 0; o < c; ++o) {
      double z = b(0, o);
      for (Index i = 0; i < 2 * c + 1; ++i) z += in(i) * w(i, o);
      CHECK(std::abs(p2.tokens(t, o) - z) < 1e-12);
    }
  }

  store.at("prompt.head.weight").value.setZero();
  const TokenGrid p3 = make_prompt(ph, e, a, gen.head);
  for (Index t = 0; t < 64; ++t) CHECK(p3.tokens.row(t) == b.row(0));
}

TEST_CASE("bank initialization: rows nonzero, scale 1/sqrt(C), trainable groups") {
  ParameterStore store;
  const PromptGenerator gen = build_prompt_generator(store, 64, 256, 3);
  CHECK(gen.bank_size() == 256);
  CHECK(gen.channels() == 64);
  for (Index j = 0; j < 256; ++j) CHECK(gen.bank->value.row(j).norm() >= 1e-3);
  const double var = gen.bank->value.array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 64.0).epsilon(0.05));
  CHECK(gen.bank->group == ParamGroup::MemoryBank);
  CHECK(gen.head.weight->group == ParamGroup::PromptHead);
  CHECK_THROWS_AS(build_prompt_generator(store, 4, 0, 0), Error);
}

TEST_CASE("retrieval properties on random instances") {
  auto rng = make_rng(99, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Index c = 2 + trial % 7, nb = 1 + trial % 5;
    const Mat m = Mat::NullaryExpr(nb, c, [&]() { return n(rng); });
    const RowVec p = RowVec::NullaryExpr(c, [&]() { return n(rng); });
    const RowVec s = similarity(p, m);
    CHECK(s.minCoeff() >= -1.0);
    CHECK(s.maxCoeff() <= 1.0);
    const RefinedPrototype r = refine(s, m);
    CHECK(r.alpha.minCoeff() >= 0.0);
    CHECK(std::abs(r.alpha.sum() - 1.0) < 1e-12);
    const RefinedPrototype scaled = refine(similarity(scale(rng) * p, m), m);
    CHECK((scaled.alpha - r.alpha).cwiseAbs().maxCoeff() < 1e-12);
    for (int k = 0; k < 5; ++k) {
      const RowVec u = RowVec::NullaryExpr(c, [&]() { return n(rng); });
      const Vec proj = m * u.transpose();
      const double v = r.p_hat.dot(u);
      CHECK(v >= proj.minCoeff() - 1e-12);
      CHECK(v <= proj.maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("prompt generator gradients match central differences") {
  const Index c = 6;
  ParameterStore store;
  const PromptGenerator gen = build_prompt_generator(store, c, 5, 4);
  store.at("prompt.head.weight").value = random_mat(2 * c + 1, c, 13, 0.5);
  store.at("prompt.head.bias").value = random_mat(1, c, 14, 0.5);
  Mat e_tokens = random_mat(12, c, 15);
  const Mat r = random_mat(12, c, 16);
  auto loss = [&]() { return gen.forward(grid(e_tokens, 3, 4)).prompt.tokens.cwiseProduct(r).sum(); };

  const TokenGrid e = grid(e_tokens, 3, 4);
  const auto trace = gen.forward(e);
  store.zero_grad();
  const Mat de = gen.backward(e, trace, r);
  for (Parameter& p : store) {
    std::vector<Index> all(static_cast<std::size_t>(p.size()));
    for (Index i = 0; i < p.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    CHECK_MESSAGE(oracle::max_grad_error(p, p.grad, loss, all) < 1e-4, p.name);
  }
  double worst = 0.0;
  for (Index i = 0; i < e_tokens.size(); ++i) {
    const double saved = e_tokens.data()[i];
    e_tokens.data()[i] = saved + 1e-5;
    const double up = loss();
    e_tokens.data()[i] = saved - 1e-5;
    const double down = loss();
    e_tokens.data()[i] = saved;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(num - de.data()[i]) / std::max(std::abs(num) + std::abs(de.data()[i]), 1e-8));
  }
  CHECK(worst < 1e-4);
}
