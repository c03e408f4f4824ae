#pragma once

// Low-rank updates on frozen attention projections: W' = W + A B, with A
// d x r, B r x d. Only A and B are trainable; the base weight is shared with
// the frozen backbone.

#include <map>
#include <string>
#include <vector>

#include "fsam/vit.hpp"

namespace fsam {

struct LoRAFactor {
  Parameter* a = nullptr;  // d x r
  Parameter* b = nullptr;  // r x d
  double scaling = 1.0;

  Index rank() const { return a->value.cols(); }
  Index dim() const { return a->value.rows(); }
  Index num_parameters() const { return a->size() + b->size(); }
  /// Dense d x d update, for tests and reports only.
  Mat delta() const { return scaling * a->value * b->value; }
};

/// A ~ N(0, 1/r) (variance), B = 0, so the update starts at exactly zero.
LoRAFactor lora_init(ParameterStore& store, const std::string& prefix, Index d, Index r, std::uint64_t seed);

class AdaptedProjection final : public Projection {
 public:
  AdaptedProjection() = default;
  AdaptedProjection(Parameter* base, LoRAFactor factor) : base_(base), factor_(factor) {}

  /// x W + s (x A) B. The d x d product A B is never formed.
  Mat forward(const Mat& x) const override;
  Mat backward(const Mat& x, const Mat& dy) const override;

  const Parameter& base() const { return *base_; }
  const LoRAFactor& factor() const { return factor_; }

 private:
  Parameter* base_ = nullptr;
  LoRAFactor factor_;
};

Mat lora_apply(const AdaptedProjection& proj, const Mat& x);

struct AdaptedAttention {
  AdaptedProjection q, k, v;

  ProjectionSet projections() const { return {&q, &k, &v}; }
  Index num_parameters() const {
    return q.factor().num_parameters() + k.factor().num_parameters() + v.factor().num_parameters();
  }
};

/// Wraps Q, K and V (not the output projection) with independent factors.
AdaptedAttention wrap_attention(ParameterStore& store, const std::string& prefix, const AttentionWeights& weights,
                                Index r, std::uint64_t seed);

struct ParameterAudit {
  struct Entry {
    std::string name;
    ParamGroup group;
    Index rows;
    Index cols;
  };
  std::vector<Entry> entries;
  std::map<ParamGroup, Index> counts;  // scalar parameter count per group
  Index frozen = 0;
  Index trainable = 0;

  Index count(ParamGroup group) const {
    auto it = counts.find(group);
    return it == counts.end() ? 0 : it->second;
  }
};

/// Partitions the store into frozen and trainable parameters. Throws
/// `UnregisteredParameter` if any tensor has no group.
ParameterAudit audit_parameters(const ParameterStore& store);

}  // namespace fsam
