#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "fsam/error.hpp"

namespace fsam {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;
/// Integer class labels, H x W.
using LabelGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Which partition a parameter belongs to. Everything except `FrozenBase`
/// is optimized; `Unregistered` is never valid in an assembled model.
enum class ParamGroup {
  Unregistered,
  FrozenBase,
  Lora,
  Adapter,
  FreqEmbed,
  MemoryBank,
  PromptHead,
  Decoder,
};

std::string_view to_string(ParamGroup group);

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  ParamGroup group = ParamGroup::Unregistered;

  bool trainable() const {
    return group != ParamGroup::FrozenBase && group != ParamGroup::Unregistered;
  }
  Index size() const { return value.size(); }
};

/// Owns every parameter of a model. Addresses are stable (deque storage), so
/// layers keep raw `Parameter*` handles into the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, Index rows, Index cols, ParamGroup group);

  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::deque<Parameter> params_;
};

/// FNV-1a over the raw bytes of a matrix (shape included).
std::uint64_t checksum(const Mat& m);

// Seeded initializers.
void fill_normal(Mat& m, double stddev, std::mt19937_64& rng);
void fill_truncated_normal(Mat& m, double stddev, std::mt19937_64& rng);

/// Derives an independent engine from a base seed and a stream tag.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

bool all_finite(const Mat& m);

}  // namespace fsam
