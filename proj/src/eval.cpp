#include "fsam/eval.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "fsam/seg_model.hpp"

namespace fsam {

double dice(const LabelGrid& pred, const LabelGrid& gt, int class_id) {
  require(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ErrorKind::DimensionMismatch,
          "dice: prediction and ground truth differ in shape");
  Index tp = 0, fp = 0, fn = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] == class_id;
    const bool g = gt.data()[i] == class_id;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

DomainScore score_domain(const Predictor& predictor, std::span<const Sample> samples, Index num_classes) {
  require(num_classes >= 2, ErrorKind::InvalidConfig, "score_domain: need at least two classes");
  require(!samples.empty(), ErrorKind::EmptyDomain, "score_domain: no samples");
  DomainScore score;
  score.domain = samples.front().domain;
  score.samples = static_cast<Index>(samples.size());
  score.per_class.assign(static_cast<std::size_t>(num_classes - 1), 0.0);
  for (const auto& s : samples) {
    const LabelGrid pred = predictor(s.image);
    for (Index k = 1; k < num_classes; ++k)
      score.per_class[static_cast<std::size_t>(k - 1)] += dice(pred, s.mask, static_cast<int>(k));
  }
  for (double& v : score.per_class) v /= static_cast<double>(samples.size());
  score.mean = mean_of(score.per_class);
  return score;
}

const DomainScore* DSCReport::find(std::string_view source, std::string_view target) const {
  for (const auto& row : rows) {
    if (row.source != source) continue;
    for (const auto& t : row.targets)
      if (t.domain == target) return &t;
  }
  return nullptr;
}

nlohmann::json DSCReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["domains"] = domains;
  j["average"] = average;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r;
    r["source"] = row.source;
    r["average"] = row.average;
    r["targets"] = nlohmann::json::array();
    for (const auto& t : row.targets)
      r["targets"].push_back({{"domain", t.domain}, {"per_class", t.per_class}, {"samples", t.samples}, {"mean", t.mean}});
    j["rows"].push_back(std::move(r));
  }
  return j;
}

std::string DSCReport::to_csv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "source";
  for (const auto& d : domains) out << ',' << d;
  out << ",average\n";
  for (const auto& row : rows) {
    out << row.source;
    for (const auto& d : domains) {
      out << ',';
      if (const auto* t = find(row.source, d)) out << t->mean;
    }
    out << ',' << row.average << '\n';
  }
  out << "average";
  for (std::size_t i = 0; i < domains.size(); ++i) out << ',';
  out << ',' << average << '\n';
  return out.str();
}

DSCReport leave_one_out_eval(const std::map<std::string, Predictor>& models, const Dataset& data, Index num_classes,
                             const LeaveOneOutOptions& options) {
  require(!models.empty(), ErrorKind::MissingCheckpoint, "leave_one_out_eval: no source models given");
  for (const auto& t : options.targets)
    require(data.contains(t), ErrorKind::EmptyDomain, "leave_one_out_eval: unknown target domain '" + t + "'");

  DSCReport report;
  report.num_classes = num_classes;
  for (const auto& [source, predictor] : models) {
    require(data.contains(source), ErrorKind::EmptyDomain, "leave_one_out_eval: no data for source '" + source + "'");
    require(static_cast<bool>(predictor), ErrorKind::MissingCheckpoint, "no model for source domain '" + source + "'");
    SourceRow row;
    row.source = source;
    std::vector<double> means;
    for (const auto& [domain, samples] : data) {
      const bool wanted = options.targets.empty()
                              ? domain != source
                              : std::find(options.targets.begin(), options.targets.end(), domain) != options.targets.end();
      if (!wanted) continue;
      row.targets.push_back(score_domain(predictor, samples, num_classes));
      means.push_back(row.targets.back().mean);
    }
    require(!row.targets.empty(), ErrorKind::EmptyDomain, "leave_one_out_eval: no target domains for '" + source + "'");
    row.average = mean_of(means);
    report.rows.push_back(std::move(row));
  }
  for (const auto& entry : data) report.domains.push_back(entry.first);
  std::vector<double> row_means;
  for (const auto& row : report.rows) row_means.push_back(row.average);
  report.average = mean_of(row_means);
  return report;
}

std::vector<double> per_class_dice(const FSAMModel& model, std::span<const Sample> samples) {
  const Predictor predictor = [&model](const Image& image) { return model.predict(image); };
  return score_domain(predictor, samples, model.config().num_classes).per_class;
}

double mean_foreground_dice(const FSAMModel& model, std::span<const Sample> samples) {
  return mean_of(per_class_dice(model, samples));
}

}  // namespace fsam
