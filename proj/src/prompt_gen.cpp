#include "fsam/prompt_gen.hpp"

#include <cmath>

namespace fsam {

Vec ActivationMap::as_tokens() const {
  Vec out(values.size());
  for (Index r = 0; r < values.rows(); ++r)
    for (Index c = 0; c < values.cols(); ++c) out(r * values.cols() + c) = values(r, c);
  return out;
}

InstancePrototype instance_prototype(const TokenGrid& e) {
  require(e.num_tokens() > 0 && e.width() > 0, ErrorKind::EmptyInput, "instance_prototype: empty token grid");
  InstancePrototype proto;
  proto.p.resize(e.width());
  proto.argmax.resize(static_cast<std::size_t>(e.width()));
  for (Index c = 0; c < e.width(); ++c) {
    Index best = 0;
    const double peak = e.tokens.col(c).maxCoeff(&best);
    proto.argmax[static_cast<std::size_t>(c)] = best;
    proto.p(c) = e.tokens.col(c).mean() + peak;
  }
  return proto;
}

void instance_prototype_backward(const InstancePrototype& proto, Index num_tokens, const RowVec& dp, Mat& de) {
  de.rowwise() += dp / static_cast<double>(num_tokens);
  for (Index c = 0; c < dp.size(); ++c) de(proto.argmax[static_cast<std::size_t>(c)], c) += dp(c);
}

RowVec similarity(const RowVec& p, const Mat& bank) {
  require(p.size() == bank.cols(), ErrorKind::DimensionMismatch, "similarity: prototype width != bank width");
  const double p_norm = p.norm();
  require(p_norm > 0.0, ErrorKind::ZeroNorm, "similarity: prototype has zero norm");
  RowVec s(bank.rows());
  for (Index j = 0; j < bank.rows(); ++j) {
    const double m_norm = bank.row(j).norm();
    require(m_norm > 0.0, ErrorKind::ZeroNorm, "similarity: bank row " + std::to_string(j) + " has zero norm");
    s(j) = std::clamp(p.dot(bank.row(j)) / (p_norm * m_norm), -1.0, 1.0);
  }
  return s;
}

void similarity_backward(const RowVec& p, const Mat& bank, const RowVec& s, const RowVec& ds, RowVec& dp,
                         Mat& dbank) {
  const double p_norm = p.norm();
  const RowVec u = p / p_norm;
  for (Index j = 0; j < bank.rows(); ++j) {
    const double m_norm = bank.row(j).norm();
    const RowVec w = bank.row(j) / m_norm;
    dp += ds(j) * (w - s(j) * u) / p_norm;
    dbank.row(j) += ds(j) * (u - s(j) * w) / m_norm;
  }
}

RefinedPrototype refine(const RowVec& s, const Mat& bank) {
  require(s.size() == bank.rows(), ErrorKind::DimensionMismatch, "refine: similarity length != bank rows");
  require(s.allFinite(), ErrorKind::NonFinite, "refine: non-finite similarity");
  RefinedPrototype out;
  const double peak = s.maxCoeff();
  out.alpha = (s.array() - peak).exp().matrix();
  out.alpha /= out.alpha.sum();
  out.p_hat = out.alpha * bank;
  return out;
}

RowVec refine_backward(const RefinedPrototype& refined, const Mat& bank, const RowVec& dp_hat, Mat& dbank) {
  dbank.noalias() += refined.alpha.transpose() * dp_hat;
  const RowVec dalpha = dp_hat * bank.transpose();
  const double inner = refined.alpha.dot(dalpha);
  return refined.alpha.cwiseProduct((dalpha.array() - inner).matrix());
}

ActivationMap activation_map(const RowVec& p_hat, const TokenGrid& e) {
  require(p_hat.size() == e.width(), ErrorKind::DimensionMismatch, "activation_map: width mismatch");
  const double ph_norm = p_hat.norm();
  require(ph_norm > 0.0, ErrorKind::ZeroNorm, "activation_map: refined prototype has zero norm");
  ActivationMap out;
  out.values = Mat::Zero(e.rows, e.cols);
  for (Index t = 0; t < e.num_tokens(); ++t) {
    const double e_norm = e.tokens.row(t).norm();
    if (e_norm == 0.0) continue;
    out.values(t / e.cols, t % e.cols) = std::clamp(p_hat.dot(e.tokens.row(t)) / (ph_norm * e_norm), -1.0, 1.0);
  }
  return out;
}

void activation_map_backward(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a, const Vec& da,
                             RowVec& dp_hat, Mat& de) {
  const double ph_norm = p_hat.norm();
  const RowVec u = p_hat / ph_norm;
  for (Index t = 0; t < e.num_tokens(); ++t) {
    const double e_norm = e.tokens.row(t).norm();
    if (e_norm == 0.0) continue;
    const double at = a.values(t / e.cols, t % e.cols);
    const RowVec w = e.tokens.row(t) / e_norm;
    dp_hat += da(t) * (w - at * u) / ph_norm;
    de.row(t) += da(t) * (u - at * w) / e_norm;
  }
}

Mat prompt_features(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a) {
  require(p_hat.size() == e.width(), ErrorKind::DimensionMismatch, "make_prompt: prototype width mismatch");
  require(a.values.rows() == e.rows && a.values.cols() == e.cols, ErrorKind::DimensionMismatch,
          "make_prompt: activation map does not match token grid");
  const Index c = e.width();
  Mat features(e.num_tokens(), 2 * c + 1);
  features.leftCols(c) = p_hat.replicate(e.num_tokens(), 1);
  features.middleCols(c, c) = e.tokens;
  features.col(2 * c) = a.as_tokens();
  return features;
}

TokenGrid make_prompt(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a, const Linear& head) {
  TokenGrid prompt;
  prompt.rows = e.rows;
  prompt.cols = e.cols;
  prompt.tokens = head.forward(prompt_features(p_hat, e, a));
  return prompt;
}

PromptGenerator::Trace PromptGenerator::forward(const TokenGrid& e) const {
  Trace trace;
  trace.proto = instance_prototype(e);
  trace.s = similarity(trace.proto.p, bank->value);
  trace.refined = refine(trace.s, bank->value);
  trace.activation = activation_map(trace.refined.p_hat, e);
  trace.features = prompt_features(trace.refined.p_hat, e, trace.activation);
  trace.prompt.rows = e.rows;
  trace.prompt.cols = e.cols;
  trace.prompt.tokens = head.forward(trace.features);
  return trace;
}

Mat PromptGenerator::backward(const TokenGrid& e, const Trace& trace, const Mat& dprompt) const {
  const Index c = e.width();
  const Mat dfeatures = head.backward(trace.features, dprompt);

  Mat de = dfeatures.middleCols(c, c);
  RowVec dp_hat = dfeatures.leftCols(c).colwise().sum();
  const Vec da = dfeatures.col(2 * c);
  activation_map_backward(trace.refined.p_hat, e, trace.activation, da, dp_hat, de);

  const RowVec ds = refine_backward(trace.refined, bank->value, dp_hat, bank->grad);
  RowVec dp = RowVec::Zero(c);
  similarity_backward(trace.proto.p, bank->value, trace.s, ds, dp, bank->grad);
  instance_prototype_backward(trace.proto, e.num_tokens(), dp, de);
  return de;
}

PromptGenerator build_prompt_generator(ParameterStore& store, Index channels, Index bank_size, std::uint64_t seed) {
  require(bank_size >= 1, ErrorKind::InvalidConfig, "memory bank needs at least one prototype");
  auto rng = make_rng(seed, 0x50524f4d);
  PromptGenerator gen;
  gen.bank = &store.add("prompt.memory_bank", bank_size, channels, ParamGroup::MemoryBank);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(channels));
  for (Index j = 0; j < bank_size; ++j) {
    Mat row(1, channels);
    do {
      fill_normal(row, stddev, rng);
    } while (row.norm() < 1e-3);
    gen.bank->value.row(j) = row;
  }
  gen.head.weight = &store.add("prompt.head.weight", 2 * channels + 1, channels, ParamGroup::PromptHead);
  gen.head.bias = &store.add("prompt.head.bias", 1, channels, ParamGroup::PromptHead);
  fill_truncated_normal(gen.head.weight->value, 0.02, rng);
  return gen;
}

}  // namespace fsam
