#include "fsam/tensor.hpp"

#include <cstring>

namespace fsam {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::DimensionTooLarge: return "dimension-too-large";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::InvalidRank: return "invalid-rank";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::IndexOutOfRange: return "index-out-of-range";
    case ErrorKind::ZeroNorm: return "zero-norm";
    case ErrorKind::EmptyInput: return "empty-input";
    case ErrorKind::LabelOutOfRange: return "label-out-of-range";
    case ErrorKind::UnregisteredParameter: return "unregistered-parameter";
    case ErrorKind::MissingMask: return "missing-mask";
    case ErrorKind::EmptyDomain: return "empty-domain";
    case ErrorKind::UnreadableFile: return "unreadable-file";
    case ErrorKind::TooFewSamples: return "too-few-samples";
    case ErrorKind::MissingCheckpoint: return "missing-checkpoint";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Io: return "io";
    case ErrorKind::MissingInput: return "missing-input";
  }
  return "unknown";
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Unregistered: return "unregistered";
    case ParamGroup::FrozenBase: return "frozen_base";
    case ParamGroup::Lora: return "lora";
    case ParamGroup::Adapter: return "adapter";
    case ParamGroup::FreqEmbed: return "freq_embed";
    case ParamGroup::MemoryBank: return "memory_bank";
    case ParamGroup::PromptHead: return "prompt_head";
    case ParamGroup::Decoder: return "decoder";
  }
  return "unknown";
}

Parameter& ParameterStore::add(std::string name, Index rows, Index cols, ParamGroup group) {
  require(find(name) == nullptr, ErrorKind::InvalidConfig, "duplicate parameter name: " + name);
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = Mat::Zero(rows, cols);
  p.grad = Mat::Zero(rows, cols);
  p.group = group;
  return p;
}

Parameter* ParameterStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterStore::at(std::string_view name) {
  Parameter* p = find(name);
  if (p == nullptr) fail(ErrorKind::IndexOutOfRange, "no parameter named " + std::string(name));
  return *p;
}

const Parameter& ParameterStore::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (p == nullptr) fail(ErrorKind::IndexOutOfRange, "no parameter named " + std::string(name));
  return *p;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::uint64_t checksum(const Mat& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  mix(shape, sizeof(shape));
  mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return h;
}

void fill_normal(Mat& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
}

void fill_truncated_normal(Mat& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      double z = dist(rng);
      while (std::abs(z) > 2.0) z = dist(rng);
      m(i, j) = z * stddev;
    }
  }
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace fsam
