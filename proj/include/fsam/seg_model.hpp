#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "fsam/freq_adapter.hpp"
#include "fsam/lora.hpp"
#include "fsam/prompt_gen.hpp"
#include "fsam/vit.hpp"

namespace fsam {

struct FSAMConfig {
  ViTConfig vit;
  Index lora_rank = 4;
  Index adapter_mid = 4;
  Index bank_size = 8;
  Index num_classes = 2;
  double lambda = 0.8;
  double lr = 5e-4;
  double weight_decay = 0.1;
  Index warmup_steps = 25;
  Index max_epochs = 200;
  Index early_stop_epoch = 160;
  Index batch_size = 8;
  /// false ablates the whole frequency pathway (no adapters are built).
  bool use_frequency = true;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const FSAMConfig& config);
void from_json(const nlohmann::json& j, FSAMConfig& config);

/// Per-pixel class logits at input resolution; row y * width + x, one column
/// per class.
struct MaskLogits {
  Mat values;
  Index height = 0;
  Index width = 0;

  Index num_classes() const { return values.cols(); }
  Plane<double> plane(Index k) const;
  LabelGrid argmax() const;
};

/// Lightweight stand-in for the promptable decoder:
/// [e, prompt] -> Conv3x3 + GELU -> Conv3x3 + GELU -> bilinear upsample -> 1x1 to K.
struct MaskDecoder {
  Conv3x3 conv1;  // 2C -> C
  Conv3x3 conv2;  // C -> C
  Linear proj;    // C -> K
  Index out_size = 0;
  Index grid_side = 0;
  Eigen::SparseMatrix<double, Eigen::RowMajor> upsample;

  struct Cache {
    Mat input;
    Mat h1_pre, h1;
    Mat h2_pre, h2;
    Mat up;
  };

  MaskLogits forward(const TokenGrid& e, const TokenGrid& prompt, Cache* cache = nullptr) const;
  /// Returns (dL/de, dL/dprompt).
  std::pair<Mat, Mat> backward(const Cache& cache, const Mat& dlogits) const;
};

MaskDecoder build_mask_decoder(ParameterStore& store, Index channels, Index grid_side, Index out_size,
                               Index num_classes, std::uint64_t seed);

MaskLogits mask_decoder(const TokenGrid& e, const TokenGrid& prompt, const MaskDecoder& decoder);

struct ForwardOptions {
  bool lora = true;
  bool frequency = true;
};

class FSAMModel {
 public:
  explicit FSAMModel(const FSAMConfig& config);
  FSAMModel(const FSAMModel&) = delete;
  FSAMModel& operator=(const FSAMModel&) = delete;

  struct Trace {
    ForwardOptions options;
    Mat spatial_patches;
    Mat freq_patches;
    TokenGrid freq_tokens;
    std::vector<VitBlock::Cache> blocks;
    std::vector<FrequencyAdapter::Cache> adapters;
    TokenGrid embedding;
    PromptGenerator::Trace prompt;
    MaskDecoder::Cache decoder;
    MaskLogits logits;
  };

  const FSAMConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  bool has_frequency_pathway() const { return frequency_.has_value(); }

  const VitEncoder& backbone() const { return vit_; }
  const std::vector<AdaptedAttention>& lora() const { return lora_; }
  const FrequencyPathway* frequency() const { return frequency_ ? &*frequency_ : nullptr; }
  const PromptGenerator& prompt_generator() const { return prompt_; }
  const MaskDecoder& decoder() const { return decoder_; }

  /// Final encoder embedding e (per-block fusion applied when enabled).
  TokenGrid encode(const Image& image, ForwardOptions options = {}) const;
  MaskLogits forward(const Image& image, ForwardOptions options = {}) const;
  LabelGrid predict(const Image& image) const { return forward(image).argmax(); }

  Trace trace(const Image& image, ForwardOptions options = {}) const;
  /// Accumulates dL/dparam for every parameter (frozen ones included).
  void backward(const Trace& trace, const Mat& dlogits);

  ParameterAudit audit() const { return audit_parameters(store_); }

 private:
  Trace run(const Image& image, ForwardOptions options, bool keep_caches) const;
  ProjectionSet projections(std::size_t block, const ForwardOptions& options) const;

  FSAMConfig config_;
  ParameterStore store_;
  VitEncoder vit_;
  std::vector<AdaptedAttention> lora_;
  std::optional<FrequencyPathway> frequency_;
  PromptGenerator prompt_;
  MaskDecoder decoder_;
};

std::unique_ptr<FSAMModel> build(const FSAMConfig& config);

}  // namespace fsam
