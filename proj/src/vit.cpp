#include "fsam/vit.hpp"

#include <cmath>

namespace fsam {

Index ViTConfig::mlp_hidden() const {
  return std::max<Index>(1, static_cast<Index>(std::lround(mlp_ratio * static_cast<double>(embed_dim))));
}

void ViTConfig::validate() const {
  require(patch_size >= 1 && image_size >= 2, ErrorKind::InvalidConfig, "image/patch size must be positive");
  require(image_size % patch_size == 0, ErrorKind::InvalidConfig, "image_size must be divisible by patch_size");
  require(heads >= 1 && embed_dim % heads == 0, ErrorKind::InvalidConfig, "embed_dim must be divisible by heads");
  require(depth >= 1, ErrorKind::InvalidConfig, "depth must be >= 1");
  require(mlp_ratio > 0.0, ErrorKind::InvalidConfig, "mlp_ratio must be > 0");
  require(in_channels == 1 || in_channels == 3, ErrorKind::InvalidConfig, "in_channels must be 1 or 3");
}

Mat patchify(const Image& input, Index patch_size) {
  const Index h = input.height();
  const Index w = input.width();
  require(h % patch_size == 0 && w % patch_size == 0, ErrorKind::DimensionMismatch,
          "image size not divisible by patch size");
  const Index rows = h / patch_size;
  const Index cols = w / patch_size;
  const Index channels = input.num_channels();
  Mat patches(rows * cols, channels * patch_size * patch_size);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const Index t = r * cols + c;
      for (Index ch = 0; ch < channels; ++ch)
        for (Index py = 0; py < patch_size; ++py)
          for (Index px = 0; px < patch_size; ++px)
            patches(t, (ch * patch_size + py) * patch_size + px) =
                input.channels[static_cast<std::size_t>(ch)](r * patch_size + py, c * patch_size + px);
    }
  }
  return patches;
}

TokenGrid PatchEmbed::forward(const Image& input, Mat* patches) const {
  require(input.height() == image_size && input.width() == image_size, ErrorKind::DimensionMismatch,
          "patch_embed: input is " + std::to_string(input.height()) + "x" + std::to_string(input.width()) +
              ", expected " + std::to_string(image_size));
  const Index in_channels = proj.in_features() / (patch_size * patch_size);
  require(input.num_channels() == in_channels, ErrorKind::DimensionMismatch, "patch_embed: channel mismatch");
  Mat flat = patchify(input, patch_size);
  TokenGrid grid;
  grid.rows = image_size / patch_size;
  grid.cols = grid.rows;
  grid.tokens = proj.forward(flat) + pos->value;
  if (patches != nullptr) *patches = std::move(flat);
  return grid;
}

void PatchEmbed::backward(const Mat& patches, const Mat& dtokens) const {
  proj.weight->grad.noalias() += patches.transpose() * dtokens;
  if (proj.bias != nullptr) proj.bias->grad.row(0) += dtokens.colwise().sum();
  pos->grad += dtokens;
}

PatchEmbed make_patch_embed(ParameterStore& store, const std::string& prefix, const ViTConfig& config,
                            ParamGroup group, std::mt19937_64& rng) {
  PatchEmbed embed;
  embed.image_size = config.image_size;
  embed.patch_size = config.patch_size;
  embed.proj.weight = &store.add(prefix + ".weight", config.patch_dim(), config.embed_dim, group);
  embed.proj.bias = &store.add(prefix + ".bias", 1, config.embed_dim, group);
  embed.pos = &store.add(prefix + ".pos", config.num_tokens(), config.embed_dim, group);
  fill_truncated_normal(embed.proj.weight->value, 0.02, rng);
  fill_truncated_normal(embed.pos->value, 0.02, rng);
  return embed;
}

TokenGrid patch_embed(const Image& input, const PatchEmbed& embed) { return embed.forward(input); }

Mat FrozenProjection::forward(const Mat& x) const {
  require(x.cols() == weight_->value.rows(), ErrorKind::DimensionMismatch, "projection: input width mismatch");
  return x * weight_->value;
}

Mat FrozenProjection::backward(const Mat& x, const Mat& dy) const {
  weight_->grad.noalias() += x.transpose() * dy;
  return dy * weight_->value.transpose();
}

Mat attention_forward(const Mat& tokens, const AttentionWeights& weights, const Projection& q_proj,
                      const Projection& k_proj, const Projection& v_proj, Index heads, AttentionCache* cache) {
  const Index d = weights.dim();
  require(tokens.cols() == d, ErrorKind::DimensionMismatch,
          "attention: token width " + std::to_string(tokens.cols()) + " != " + std::to_string(d));
  require(heads >= 1 && d % heads == 0, ErrorKind::DimensionMismatch, "attention: d not divisible by heads");
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = q_proj.forward(tokens);
  Mat k = k_proj.forward(tokens);
  Mat v = v_proj.forward(tokens);
  Mat context(tokens.rows(), d);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Mat p = softmax_rows((qh * kh.transpose()) * scale);
    context.middleCols(h * dh, dh).noalias() = p * vh;
    probs.push_back(std::move(p));
  }
  Mat out = context * weights.w_o->value;
  if (weights.b_o != nullptr) out.rowwise() += weights.b_o->value.row(0);

  if (cache != nullptr) {
    cache->input = tokens;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
  }
  return out;
}

Mat attention_backward(const AttentionCache& cache, const AttentionWeights& weights, const Projection& q_proj,
                       const Projection& k_proj, const Projection& v_proj, Index heads, const Mat& dy) {
  const Index d = weights.dim();
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  weights.w_o->grad.noalias() += cache.context.transpose() * dy;
  if (weights.b_o != nullptr) weights.b_o->grad.row(0) += dy.colwise().sum();
  const Mat dcontext = dy * weights.w_o->value.transpose();

  Mat dq(cache.q.rows(), d), dk(cache.k.rows(), d), dv(cache.v.rows(), d);
  for (Index h = 0; h < heads; ++h) {
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    const auto dctx = dcontext.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx;
    const Mat dp = dctx * vh.transpose();
    const Mat ds = softmax_rows_backward(p, dp) * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * kh;
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
  }
  Mat dx = q_proj.backward(cache.input, dq);
  dx += k_proj.backward(cache.input, dk);
  dx += v_proj.backward(cache.input, dv);
  return dx;
}

Mat VitBlock::forward(const Mat& x, const ProjectionSet& proj, Cache* cache) const {
  LayerNorm::Cache n1, n2;
  AttentionCache ac;
  const Mat h1 = norm1.forward(x, &n1);
  Mat residual = x + attention_forward(h1, attn, *proj.q, *proj.k, *proj.v, heads, cache ? &ac : nullptr);
  Mat h2 = norm2.forward(residual, &n2);
  Mat hidden_pre = fc1.forward(h2);
  Mat hidden = gelu(hidden_pre);
  Mat out = residual + fc2.forward(hidden);
  if (cache != nullptr) {
    cache->norm1 = std::move(n1);
    cache->norm2 = std::move(n2);
    cache->attn = std::move(ac);
    cache->residual = std::move(residual);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->norm2_out = std::move(h2);
  }
  return out;
}

Mat VitBlock::backward(const Cache& cache, const ProjectionSet& proj, const Mat& dy) const {
  const Mat dhidden = fc2.backward(cache.hidden, dy);
  const Mat dhidden_pre = dhidden.cwiseProduct(gelu_derivative(cache.hidden_pre));
  const Mat dh2 = fc1.backward(cache.norm2_out, dhidden_pre);
  const Mat dresidual = dy + norm2.backward(cache.norm2, dh2);
  const Mat dh1 = attention_backward(cache.attn, attn, *proj.q, *proj.k, *proj.v, heads, dresidual);
  return dresidual + norm1.backward(cache.norm1, dh1);
}

VitBlock make_vit_block(ParameterStore& store, const std::string& prefix, const ViTConfig& config,
                        std::mt19937_64& rng) {
  const Index d = config.embed_dim;
  const Index hidden = config.mlp_hidden();
  const ParamGroup g = ParamGroup::FrozenBase;
  VitBlock block;
  block.heads = config.heads;

  block.norm1.gamma = &store.add(prefix + ".norm1.gamma", 1, d, g);
  block.norm1.beta = &store.add(prefix + ".norm1.beta", 1, d, g);
  block.norm1.gamma->value.setOnes();

  block.attn.w_q = &store.add(prefix + ".attn.w_q", d, d, g);
  block.attn.w_k = &store.add(prefix + ".attn.w_k", d, d, g);
  block.attn.w_v = &store.add(prefix + ".attn.w_v", d, d, g);
  block.attn.w_o = &store.add(prefix + ".attn.w_o", d, d, g);
  block.attn.b_o = &store.add(prefix + ".attn.b_o", 1, d, g);
  for (Parameter* p : {block.attn.w_q, block.attn.w_k, block.attn.w_v, block.attn.w_o})
    fill_truncated_normal(p->value, 0.02, rng);
  block.q = FrozenProjection(block.attn.w_q);
  block.k = FrozenProjection(block.attn.w_k);
  block.v = FrozenProjection(block.attn.w_v);

  block.norm2.gamma = &store.add(prefix + ".norm2.gamma", 1, d, g);
  block.norm2.beta = &store.add(prefix + ".norm2.beta", 1, d, g);
  block.norm2.gamma->value.setOnes();

  block.fc1.weight = &store.add(prefix + ".mlp.fc1.weight", d, hidden, g);
  block.fc1.bias = &store.add(prefix + ".mlp.fc1.bias", 1, hidden, g);
  block.fc2.weight = &store.add(prefix + ".mlp.fc2.weight", hidden, d, g);
  block.fc2.bias = &store.add(prefix + ".mlp.fc2.bias", 1, d, g);
  fill_truncated_normal(block.fc1.weight->value, 0.02, rng);
  fill_truncated_normal(block.fc2.weight->value, 0.02, rng);
  return block;
}

TokenGrid VitEncoder::block_forward(const TokenGrid& tokens, Index block_index) const {
  require(block_index >= 0 && block_index < static_cast<Index>(blocks.size()), ErrorKind::IndexOutOfRange,
          "block index " + std::to_string(block_index) + " out of range");
  TokenGrid out = tokens;
  out.tokens = blocks[static_cast<std::size_t>(block_index)].forward(tokens.tokens);
  return out;
}

TokenGrid VitEncoder::forward(const Image& input) const {
  TokenGrid grid = embed.forward(input);
  for (Index i = 0; i < static_cast<Index>(blocks.size()); ++i) grid = block_forward(grid, i);
  return grid;
}

VitEncoder build_vit(ParameterStore& store, const ViTConfig& config) {
  config.validate();
  auto rng = make_rng(config.seed, 0x5649);
  VitEncoder encoder;
  encoder.config = config;
  encoder.embed = make_patch_embed(store, "vit.patch_embed", config, ParamGroup::FrozenBase, rng);
  for (Index i = 0; i < config.depth; ++i)
    encoder.blocks.push_back(make_vit_block(store, "vit.blocks." + std::to_string(i), config, rng));
  return encoder;
}

}  // namespace fsam
