#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsam/data.hpp"

namespace fsam {

class FSAMModel;

/// 2 TP / (2 TP + FP + FN) for one class; 1.0 when the class is absent from
/// both masks.
double dice(const LabelGrid& pred, const LabelGrid& gt, int class_id);

using Predictor = std::function<LabelGrid(const Image&)>;

struct DomainScore {
  std::string domain;
  /// Mean over samples, one entry per foreground class (labels 1..K-1).
  std::vector<double> per_class;
  Index samples = 0;
  /// Mean of per_class.
  double mean = 0.0;
};

/// Scores `predictor` on every sample of one domain.
DomainScore score_domain(const Predictor& predictor, std::span<const Sample> samples, Index num_classes);

struct SourceRow {
  std::string source;
  std::vector<DomainScore> targets;
  /// Arithmetic mean of the target means.
  double average = 0.0;
};

/// Leave-one-domain-out table: one row per source model, one column per
/// target domain, row averages and a grand average over rows.
struct DSCReport {
  Index num_classes = 0;
  std::vector<std::string> domains;
  std::vector<SourceRow> rows;
  double average = 0.0;

  const DomainScore* find(std::string_view source, std::string_view target) const;
  nlohmann::json to_json() const;
  /// Wide table: source, one column per domain (blank when not evaluated), average.
  std::string to_csv() const;
};

struct LeaveOneOutOptions {
  /// Restricts the evaluated targets; empty means every domain except the source.
  std::vector<std::string> targets;
};

/// `models` maps source domain -> predictor. Every source must appear in `data`.
DSCReport leave_one_out_eval(const std::map<std::string, Predictor>& models, const Dataset& data,
                             Index num_classes, const LeaveOneOutOptions& options = {});

/// Mean foreground DSC of the model over samples (mean over classes of the
/// per-class sample means).
std::vector<double> per_class_dice(const FSAMModel& model, std::span<const Sample> samples);
double mean_foreground_dice(const FSAMModel& model, std::span<const Sample> samples);

}  // namespace fsam
