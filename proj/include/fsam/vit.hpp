#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fsam/nn.hpp"
#include "fsam/spectral.hpp"
#include "fsam/tensor.hpp"

namespace fsam {

struct ViTConfig {
  Index image_size = 32;
  Index patch_size = 4;
  Index in_channels = 1;
  Index embed_dim = 16;
  Index depth = 2;
  Index heads = 2;
  double mlp_ratio = 4.0;
  std::uint64_t seed = 0;

  Index grid_side() const { return image_size / patch_size; }
  Index num_tokens() const { return grid_side() * grid_side(); }
  Index patch_dim() const { return patch_size * patch_size * in_channels; }
  Index mlp_hidden() const;

  void validate() const;
};

/// Tokens of one image, T x d with row t = r * cols + c.
struct TokenGrid {
  Mat tokens;
  Index rows = 0;
  Index cols = 0;

  Index num_tokens() const { return tokens.rows(); }
  Index width() const { return tokens.cols(); }
};

/// Flattens non-overlapping patches into a T x (C * P * P) matrix; column
/// index is (c * P + py) * P + px.
Mat patchify(const Image& input, Index patch_size);

struct PatchEmbed {
  Linear proj;
  Parameter* pos = nullptr;  // T x d
  Index image_size = 0;
  Index patch_size = 0;

  TokenGrid forward(const Image& input, Mat* patches = nullptr) const;
  /// Accumulates parameter gradients; input gradients are not needed.
  void backward(const Mat& patches, const Mat& dtokens) const;
};

PatchEmbed make_patch_embed(ParameterStore& store, const std::string& prefix, const ViTConfig& config,
                            ParamGroup group, std::mt19937_64& rng);

TokenGrid patch_embed(const Image& input, const PatchEmbed& embed);

/// A token-wise linear map used for Q, K or V. The lora module supplies an
/// adapted implementation.
class Projection {
 public:
  virtual ~Projection() = default;
  virtual Mat forward(const Mat& x) const = 0;
  /// Accumulates parameter gradients and returns dL/dx.
  virtual Mat backward(const Mat& x, const Mat& dy) const = 0;
};

class FrozenProjection final : public Projection {
 public:
  FrozenProjection() = default;
  explicit FrozenProjection(Parameter* weight) : weight_(weight) {}

  Mat forward(const Mat& x) const override;
  Mat backward(const Mat& x, const Mat& dy) const override;
  Parameter* weight() const { return weight_; }

 private:
  Parameter* weight_ = nullptr;
};

struct AttentionWeights {
  Parameter* w_q = nullptr;
  Parameter* w_k = nullptr;
  Parameter* w_v = nullptr;
  Parameter* w_o = nullptr;
  Parameter* b_o = nullptr;

  Index dim() const { return w_q->value.rows(); }
};

struct AttentionCache {
  Mat input;
  Mat q, k, v;
  std::vector<Mat> probs;  // one T x T matrix per head
  Mat context;             // concatenated head outputs, T x d
};

Mat attention_forward(const Mat& tokens, const AttentionWeights& weights, const Projection& q_proj,
                      const Projection& k_proj, const Projection& v_proj, Index heads,
                      AttentionCache* cache = nullptr);

Mat attention_backward(const AttentionCache& cache, const AttentionWeights& weights,
                       const Projection& q_proj, const Projection& k_proj, const Projection& v_proj,
                       Index heads, const Mat& dy);

struct ProjectionSet {
  const Projection* q = nullptr;
  const Projection* k = nullptr;
  const Projection* v = nullptr;
};

/// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.)).
struct VitBlock {
  LayerNorm norm1;
  AttentionWeights attn;
  FrozenProjection q, k, v;
  LayerNorm norm2;
  Linear fc1, fc2;
  Index heads = 1;

  struct Cache {
    LayerNorm::Cache norm1, norm2;
    AttentionCache attn;
    Mat residual;  // x + attention
    Mat hidden_pre;
    Mat hidden;
    Mat norm2_out;
  };

  ProjectionSet base_projections() const { return {&q, &k, &v}; }

  Mat forward(const Mat& x, const ProjectionSet& proj, Cache* cache = nullptr) const;
  Mat forward(const Mat& x, Cache* cache = nullptr) const { return forward(x, base_projections(), cache); }
  Mat backward(const Cache& cache, const ProjectionSet& proj, const Mat& dy) const;
};

VitBlock make_vit_block(ParameterStore& store, const std::string& prefix, const ViTConfig& config,
                        std::mt19937_64& rng);

/// Frozen backbone: spatial patch embedding followed by `depth` blocks.
struct VitEncoder {
  ViTConfig config;
  PatchEmbed embed;
  std::vector<VitBlock> blocks;

  TokenGrid block_forward(const TokenGrid& tokens, Index block_index) const;
  TokenGrid forward(const Image& input) const;
};

/// Registers every backbone parameter as `FrozenBase` under "vit.".
VitEncoder build_vit(ParameterStore& store, const ViTConfig& config);

}  // namespace fsam
