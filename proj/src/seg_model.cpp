#include "fsam/seg_model.hpp"

#include <cmath>

namespace fsam {

void FSAMConfig::validate() const {
  vit.validate();
  require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::InvalidConfig, "lambda must lie in [0, 1]");
  require(lora_rank >= 1 && lora_rank <= vit.embed_dim, ErrorKind::InvalidRank,
          "lora_rank must lie in [1, embed_dim]");
  require(!use_frequency || (adapter_mid >= 1 && adapter_mid < vit.embed_dim), ErrorKind::InvalidConfig,
          "adapter_mid must lie in [1, embed_dim)");
  require(bank_size >= 1, ErrorKind::InvalidConfig, "bank_size must be >= 1");
  require(num_classes >= 2, ErrorKind::InvalidConfig, "num_classes must be >= 2");
  require(lr > 0.0, ErrorKind::InvalidConfig, "lr must be > 0");
  require(weight_decay >= 0.0, ErrorKind::InvalidConfig, "weight_decay must be >= 0");
  require(warmup_steps >= 0, ErrorKind::InvalidConfig, "warmup_steps must be >= 0");
  require(max_epochs >= 1, ErrorKind::InvalidConfig, "max_epochs must be >= 1");
  require(early_stop_epoch >= 1 && early_stop_epoch <= max_epochs, ErrorKind::InvalidConfig,
          "early_stop_epoch must lie in [1, max_epochs]");
  require(batch_size >= 1, ErrorKind::InvalidConfig, "batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const FSAMConfig& c) {
  j = nlohmann::json{
      {"image_size", c.vit.image_size},
      {"patch_size", c.vit.patch_size},
      {"in_channels", c.vit.in_channels},
      {"embed_dim", c.vit.embed_dim},
      {"depth", c.vit.depth},
      {"heads", c.vit.heads},
      {"mlp_ratio", c.vit.mlp_ratio},
      {"lora_rank", c.lora_rank},
      {"adapter_mid", c.adapter_mid},
      {"bank_size", c.bank_size},
      {"num_classes", c.num_classes},
      {"lambda", c.lambda},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"warmup_steps", c.warmup_steps},
      {"max_epochs", c.max_epochs},
      {"early_stop_epoch", c.early_stop_epoch},
      {"batch_size", c.batch_size},
      {"use_frequency", c.use_frequency},
      {"seed", c.seed},
  };
}

void from_json(const nlohmann::json& j, FSAMConfig& c) {
  j.at("image_size").get_to(c.vit.image_size);
  j.at("patch_size").get_to(c.vit.patch_size);
  j.at("in_channels").get_to(c.vit.in_channels);
  j.at("embed_dim").get_to(c.vit.embed_dim);
  j.at("depth").get_to(c.vit.depth);
  j.at("heads").get_to(c.vit.heads);
  j.at("mlp_ratio").get_to(c.vit.mlp_ratio);
  j.at("lora_rank").get_to(c.lora_rank);
  j.at("adapter_mid").get_to(c.adapter_mid);
  j.at("bank_size").get_to(c.bank_size);
  j.at("num_classes").get_to(c.num_classes);
  j.at("lambda").get_to(c.lambda);
  j.at("lr").get_to(c.lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("early_stop_epoch").get_to(c.early_stop_epoch);
  j.at("batch_size").get_to(c.batch_size);
  j.at("use_frequency").get_to(c.use_frequency);
  j.at("seed").get_to(c.seed);
  c.vit.seed = c.seed;
}

Plane<double> MaskLogits::plane(Index k) const {
  Plane<double> out(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out(y, x) = values(y * width + x, k);
  return out;
}

LabelGrid MaskLogits::argmax() const {
  LabelGrid labels(height, width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      Index best = 0;
      values.row(y * width + x).maxCoeff(&best);
      labels(y, x) = static_cast<int>(best);
    }
  }
  return labels;
}

MaskLogits MaskDecoder::forward(const TokenGrid& e, const TokenGrid& prompt, Cache* cache) const {
  require(e.rows == prompt.rows && e.cols == prompt.cols && e.num_tokens() == prompt.num_tokens(),
          ErrorKind::DimensionMismatch, "mask_decoder: embedding and prompt are not spatially aligned");
  require(e.rows == grid_side && e.cols == grid_side, ErrorKind::DimensionMismatch,
          "mask_decoder: token grid does not match decoder geometry");
  Mat input(e.num_tokens(), e.width() + prompt.width());
  input << e.tokens, prompt.tokens;
  Mat h1_pre = conv1.forward(input, e.rows, e.cols);
  Mat h1 = gelu(h1_pre);
  Mat h2_pre = conv2.forward(h1, e.rows, e.cols);
  Mat h2 = gelu(h2_pre);
  Mat up = upsample * h2;

  MaskLogits logits;
  logits.height = out_size;
  logits.width = out_size;
  logits.values = proj.forward(up);
  if (cache != nullptr) {
    cache->input = std::move(input);
    cache->h1_pre = std::move(h1_pre);
    cache->h1 = std::move(h1);
    cache->h2_pre = std::move(h2_pre);
    cache->h2 = std::move(h2);
    cache->up = std::move(up);
  }
  return logits;
}

std::pair<Mat, Mat> MaskDecoder::backward(const Cache& cache, const Mat& dlogits) const {
  const Mat dup = proj.backward(cache.up, dlogits);
  const Mat dh2 = upsample.transpose() * dup;
  const Mat dh2_pre = dh2.cwiseProduct(gelu_derivative(cache.h2_pre));
  const Mat dh1 = conv2.backward(cache.h1, grid_side, grid_side, dh2_pre);
  const Mat dh1_pre = dh1.cwiseProduct(gelu_derivative(cache.h1_pre));
  const Mat dinput = conv1.backward(cache.input, grid_side, grid_side, dh1_pre);
  const Index c = conv2.weight->value.cols();
  return {dinput.leftCols(c), dinput.rightCols(dinput.cols() - c)};
}

MaskDecoder build_mask_decoder(ParameterStore& store, Index channels, Index grid_side, Index out_size,
                               Index num_classes, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x44454344);
  const ParamGroup g = ParamGroup::Decoder;
  MaskDecoder dec;
  dec.out_size = out_size;
  dec.grid_side = grid_side;
  dec.conv1.weight = &store.add("decoder.conv1.weight", 9 * 2 * channels, channels, g);
  dec.conv1.bias = &store.add("decoder.conv1.bias", 1, channels, g);
  dec.conv2.weight = &store.add("decoder.conv2.weight", 9 * channels, channels, g);
  dec.conv2.bias = &store.add("decoder.conv2.bias", 1, channels, g);
  dec.proj.weight = &store.add("decoder.proj.weight", channels, num_classes, g);
  dec.proj.bias = &store.add("decoder.proj.bias", 1, num_classes, g);
  for (Parameter* p : {dec.conv1.weight, dec.conv2.weight, dec.proj.weight})
    fill_truncated_normal(p->value, 1.0 / std::sqrt(static_cast<double>(p->value.rows())), rng);
  dec.upsample = bilinear_operator(grid_side, grid_side, out_size, out_size);
  return dec;
}

MaskLogits mask_decoder(const TokenGrid& e, const TokenGrid& prompt, const MaskDecoder& decoder) {
  return decoder.forward(e, prompt);
}

FSAMModel::FSAMModel(const FSAMConfig& config) : config_(config) {
  config_.vit.seed = config_.seed;
  config_.validate();
  vit_ = build_vit(store_, config_.vit);
  for (std::size_t i = 0; i < vit_.blocks.size(); ++i) {
    lora_.push_back(wrap_attention(store_, "lora.blocks." + std::to_string(i), vit_.blocks[i].attn,
                                   config_.lora_rank, config_.seed * 64 + i));
  }
  if (config_.use_frequency)
    frequency_ = build_frequency_pathway(store_, config_.vit, config_.adapter_mid, config_.seed);
  prompt_ = build_prompt_generator(store_, config_.vit.embed_dim, config_.bank_size, config_.seed);
  decoder_ = build_mask_decoder(store_, config_.vit.embed_dim, config_.vit.grid_side(), config_.vit.image_size,
                                config_.num_classes, config_.seed);
  audit_parameters(store_);
}

ProjectionSet FSAMModel::projections(std::size_t block, const ForwardOptions& options) const {
  if (options.lora) return lora_[block].projections();
  return vit_.blocks[block].base_projections();
}

FSAMModel::Trace FSAMModel::run(const Image& image, ForwardOptions options, bool keep_caches) const {
  Trace t;
  options.frequency = options.frequency && frequency_.has_value();
  t.options = options;

  TokenGrid x = vit_.embed.forward(image, keep_caches ? &t.spatial_patches : nullptr);
  if (options.frequency) t.freq_tokens = frequency_->embed_image(image, keep_caches ? &t.freq_patches : nullptr);

  const std::size_t depth = vit_.blocks.size();
  if (keep_caches) {
    t.blocks.resize(depth);
    if (options.frequency) t.adapters.resize(depth);
  }
  for (std::size_t i = 0; i < depth; ++i) {
    Mat y = vit_.blocks[i].forward(x.tokens, projections(i, options), keep_caches ? &t.blocks[i] : nullptr);
    if (options.frequency) {
      const Mat adapted =
          frequency_->adapters[i].forward(t.freq_tokens.tokens, keep_caches ? &t.adapters[i] : nullptr);
      y = fuse(y, adapted);
    }
    x.tokens = std::move(y);
  }
  t.embedding = std::move(x);
  t.prompt = prompt_.forward(t.embedding);
  t.logits = decoder_.forward(t.embedding, t.prompt.prompt, keep_caches ? &t.decoder : nullptr);
  return t;
}

TokenGrid FSAMModel::encode(const Image& image, ForwardOptions options) const {
  return run(image, options, false).embedding;
}

MaskLogits FSAMModel::forward(const Image& image, ForwardOptions options) const {
  return run(image, options, false).logits;
}

FSAMModel::Trace FSAMModel::trace(const Image& image, ForwardOptions options) const {
  return run(image, options, true);
}

void FSAMModel::backward(const Trace& t, const Mat& dlogits) {
  auto [de, dprompt] = decoder_.backward(t.decoder, dlogits);
  de += prompt_.backward(t.embedding, t.prompt, dprompt);

  Mat dfreq;
  if (t.options.frequency) dfreq = Mat::Zero(t.freq_tokens.num_tokens(), t.freq_tokens.width());
  Mat dx = std::move(de);
  for (std::size_t i = vit_.blocks.size(); i-- > 0;) {
    if (t.options.frequency) dfreq += frequency_->adapters[i].backward(t.freq_tokens.tokens, t.adapters[i], dx);
    dx = vit_.blocks[i].backward(t.blocks[i], projections(i, t.options), dx);
  }
  vit_.embed.backward(t.spatial_patches, dx);
  if (t.options.frequency) frequency_->embed.backward(t.freq_patches, dfreq);
}

std::unique_ptr<FSAMModel> build(const FSAMConfig& config) { return std::make_unique<FSAMModel>(config); }

}  // namespace fsam
