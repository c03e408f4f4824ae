#include "fsam/lora.hpp"

#include <cmath>

namespace fsam {

LoRAFactor lora_init(ParameterStore& store, const std::string& prefix, Index d, Index r, std::uint64_t seed) {
  require(r >= 1 && r <= d, ErrorKind::InvalidRank,
          "LoRA rank " + std::to_string(r) + " outside [1, " + std::to_string(d) + "]");
  LoRAFactor factor;
  factor.a = &store.add(prefix + ".a", d, r, ParamGroup::Lora);
  factor.b = &store.add(prefix + ".b", r, d, ParamGroup::Lora);
  auto rng = make_rng(seed, 0x4c6f5241);
  fill_normal(factor.a->value, 1.0 / std::sqrt(static_cast<double>(r)), rng);
  return factor;
}

Mat AdaptedProjection::forward(const Mat& x) const {
  require(x.cols() == base_->value.rows(), ErrorKind::DimensionMismatch,
          "lora_apply: input width " + std::to_string(x.cols()) + " != " + std::to_string(base_->value.rows()));
  Mat y = x * base_->value;
  y.noalias() += factor_.scaling * ((x * factor_.a->value) * factor_.b->value);
  return y;
}

Mat AdaptedProjection::backward(const Mat& x, const Mat& dy) const {
  const Mat& a = factor_.a->value;
  const Mat& b = factor_.b->value;
  const double s = factor_.scaling;
  const Mat dy_bt = dy * b.transpose();  // T x r
  base_->grad.noalias() += x.transpose() * dy;
  factor_.a->grad.noalias() += s * (x.transpose() * dy_bt);
  factor_.b->grad.noalias() += s * ((x * a).transpose() * dy);
  Mat dx = dy * base_->value.transpose();
  dx.noalias() += s * (dy_bt * a.transpose());
  return dx;
}

Mat lora_apply(const AdaptedProjection& proj, const Mat& x) { return proj.forward(x); }

AdaptedAttention wrap_attention(ParameterStore& store, const std::string& prefix, const AttentionWeights& weights,
                                Index r, std::uint64_t seed) {
  const Index d = weights.dim();
  AdaptedAttention out;
  out.q = AdaptedProjection(weights.w_q, lora_init(store, prefix + ".q", d, r, seed * 3 + 0));
  out.k = AdaptedProjection(weights.w_k, lora_init(store, prefix + ".k", d, r, seed * 3 + 1));
  out.v = AdaptedProjection(weights.w_v, lora_init(store, prefix + ".v", d, r, seed * 3 + 2));
  return out;
}

ParameterAudit audit_parameters(const ParameterStore& store) {
  ParameterAudit audit;
  for (const Parameter& p : store) {
    if (p.group == ParamGroup::Unregistered)
      fail(ErrorKind::UnregisteredParameter, "parameter " + p.name + " belongs to no group");
    audit.entries.push_back({p.name, p.group, p.value.rows(), p.value.cols()});
    audit.counts[p.group] += p.size();
    (p.trainable() ? audit.trainable : audit.frozen) += p.size();
  }
  return audit;
}

}  // namespace fsam
