#include "fsam/freq_adapter.hpp"

namespace fsam {

Mat FrequencyAdapter::forward(const Mat& freq_tokens, Cache* cache) const {
  Mat hidden_pre = down.forward(freq_tokens);
  Mat hidden = gelu(hidden_pre);
  Mat out = up.forward(hidden);
  if (cache != nullptr) {
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Mat FrequencyAdapter::backward(const Mat& freq_tokens, const Cache& cache, const Mat& dy) const {
  const Mat dhidden = up.backward(cache.hidden, dy);
  return down.backward(freq_tokens, dhidden.cwiseProduct(gelu_derivative(cache.hidden_pre)));
}

FrequencyAdapter make_frequency_adapter(ParameterStore& store, const std::string& prefix, Index d, Index d_mid,
                                        std::mt19937_64& rng) {
  require(d_mid >= 1 && d_mid < d, ErrorKind::InvalidConfig,
          "adapter bottleneck must satisfy 1 <= d_mid < d (got " + std::to_string(d_mid) + ")");
  FrequencyAdapter adapter;
  adapter.down.weight = &store.add(prefix + ".down.weight", d, d_mid, ParamGroup::Adapter);
  adapter.down.bias = &store.add(prefix + ".down.bias", 1, d_mid, ParamGroup::Adapter);
  adapter.up.weight = &store.add(prefix + ".up.weight", d_mid, d, ParamGroup::Adapter);
  adapter.up.bias = &store.add(prefix + ".up.bias", 1, d, ParamGroup::Adapter);
  fill_truncated_normal(adapter.down.weight->value, 0.02, rng);
  return adapter;
}

Mat adapter_forward(const FrequencyAdapter& adapter, const Mat& freq_tokens) { return adapter.forward(freq_tokens); }

TokenGrid adapter_forward(const FrequencyAdapter& adapter, const TokenGrid& freq_tokens) {
  TokenGrid out = freq_tokens;
  out.tokens = adapter.forward(freq_tokens.tokens);
  return out;
}

Mat fuse(const Mat& vit_out, const Mat& adapter_out) {
  require(vit_out.rows() == adapter_out.rows() && vit_out.cols() == adapter_out.cols(),
          ErrorKind::DimensionMismatch, "fuse: shape mismatch");
  return vit_out + adapter_out;
}

TokenGrid fuse(const TokenGrid& vit_out, const TokenGrid& adapter_out) {
  require(vit_out.rows == adapter_out.rows && vit_out.cols == adapter_out.cols, ErrorKind::DimensionMismatch,
          "fuse: grid layout mismatch");
  TokenGrid out = vit_out;
  out.tokens = fuse(vit_out.tokens, adapter_out.tokens);
  return out;
}

TokenGrid FrequencyPathway::embed_image(const Image& image, Mat* patches) const {
  return embed.forward(frequency_input(image).values, patches);
}

FrequencyPathway build_frequency_pathway(ParameterStore& store, const ViTConfig& config, Index d_mid,
                                         std::uint64_t seed) {
  auto rng = make_rng(seed, 0x46524551);
  FrequencyPathway pathway;
  pathway.embed = make_patch_embed(store, "freq.patch_embed", config, ParamGroup::FreqEmbed, rng);
  for (Index i = 0; i < config.depth; ++i)
    pathway.adapters.push_back(
        make_frequency_adapter(store, "freq.adapters." + std::to_string(i), config.embed_dim, d_mid, rng));
  return pathway;
}

TokenGrid frequency_pathway(const Image& image, const FrequencyPathway& pathway) {
  return pathway.embed_image(image);
}

}  // namespace fsam
