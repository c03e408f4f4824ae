#pragma once

#include <string>
#include <vector>

#include "fsam/vit.hpp"

namespace fsam {

/// Bottleneck MLP on frequency tokens: GELU(f W_down + b_down) W_up + b_up.
struct FrequencyAdapter {
  Linear down;  // d -> d_mid
  Linear up;    // d_mid -> d

  struct Cache {
    Mat hidden_pre;
    Mat hidden;
  };

  Index bottleneck() const { return down.out_features(); }

  Mat forward(const Mat& freq_tokens, Cache* cache = nullptr) const;
  /// Parameter gradients only; returns dL/d(freq_tokens).
  Mat backward(const Mat& freq_tokens, const Cache& cache, const Mat& dy) const;
};

/// W_down truncated normal (std 0.02), W_up and both biases zero.
FrequencyAdapter make_frequency_adapter(ParameterStore& store, const std::string& prefix, Index d, Index d_mid,
                                        std::mt19937_64& rng);

Mat adapter_forward(const FrequencyAdapter& adapter, const Mat& freq_tokens);
TokenGrid adapter_forward(const FrequencyAdapter& adapter, const TokenGrid& freq_tokens);

/// Per-block fusion of a ViT block output with its adapter output.
Mat fuse(const Mat& vit_out, const Mat& adapter_out);
TokenGrid fuse(const TokenGrid& vit_out, const TokenGrid& adapter_out);

/// Amplitude-spectrum patch embedding shared by all adapters, plus one adapter
/// per encoder block.
struct FrequencyPathway {
  PatchEmbed embed;
  std::vector<FrequencyAdapter> adapters;

  /// fft2 -> amplitude -> amplitude_preprocess -> patch embedding.
  TokenGrid embed_image(const Image& image, Mat* patches = nullptr) const;
};

FrequencyPathway build_frequency_pathway(ParameterStore& store, const ViTConfig& config, Index d_mid,
                                         std::uint64_t seed);

TokenGrid frequency_pathway(const Image& image, const FrequencyPathway& pathway);

}  // namespace fsam
