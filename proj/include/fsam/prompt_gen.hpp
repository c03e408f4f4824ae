#pragma once

// Automated dense-prompt generation from a prototype memory bank:
//   p     = GAP(e) + GMP(e)
//   s_j   = cos(p, M_j)
//   alpha = softmax(s),  p_hat = sum_j alpha_j M_j
//   A_t   = cos(p_hat, e_t)
//   prompt = Conv1x1([p_hat, e, A])

#include <string>
#include <vector>

#include "fsam/vit.hpp"

namespace fsam {

struct InstancePrototype {
  RowVec p;
  std::vector<Index> argmax;  // token index of the max per channel
};

struct RefinedPrototype {
  RowVec p_hat;
  RowVec alpha;
};

struct ActivationMap {
  Mat values;  // rows x cols, entries in [-1, 1]

  /// Token-major view (T x 1), t = r * cols + c.
  Vec as_tokens() const;
};

InstancePrototype instance_prototype(const TokenGrid& e);
/// Adds dL/de for a given dL/dp into `de`.
void instance_prototype_backward(const InstancePrototype& proto, Index num_tokens, const RowVec& dp, Mat& de);

/// Row-wise cosine similarity of p against every bank row.
RowVec similarity(const RowVec& p, const Mat& bank);
void similarity_backward(const RowVec& p, const Mat& bank, const RowVec& s, const RowVec& ds, RowVec& dp,
                         Mat& dbank);

RefinedPrototype refine(const RowVec& s, const Mat& bank);
/// Returns dL/ds and adds dL/dM into `dbank`.
RowVec refine_backward(const RefinedPrototype& refined, const Mat& bank, const RowVec& dp_hat, Mat& dbank);

ActivationMap activation_map(const RowVec& p_hat, const TokenGrid& e);
void activation_map_backward(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a, const Vec& da,
                             RowVec& dp_hat, Mat& de);

/// Concatenates [p_hat broadcast, e, a] along channels (T x (2C + 1)).
Mat prompt_features(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a);
TokenGrid make_prompt(const RowVec& p_hat, const TokenGrid& e, const ActivationMap& a, const Linear& head);

struct PromptGenerator {
  Parameter* bank = nullptr;  // N x C, trainable
  Linear head;                // (2C + 1) -> C

  struct Trace {
    InstancePrototype proto;
    RowVec s;
    RefinedPrototype refined;
    ActivationMap activation;
    Mat features;
    TokenGrid prompt;
  };

  Index bank_size() const { return bank->value.rows(); }
  Index channels() const { return bank->value.cols(); }

  Trace forward(const TokenGrid& e) const;
  /// Accumulates bank/head gradients; returns dL/de.
  Mat backward(const TokenGrid& e, const Trace& trace, const Mat& dprompt) const;
};

/// Bank rows ~ N(0, 1/sqrt(C)) redrawn until every row norm >= 1e-3; head
/// weights truncated normal.
PromptGenerator build_prompt_generator(ParameterStore& store, Index channels, Index bank_size, std::uint64_t seed);

}  // namespace fsam
