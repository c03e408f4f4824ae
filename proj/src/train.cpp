#include "fsam/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "fsam/eval.hpp"
#include "fsam/loss.hpp"
#include "fsam/optim.hpp"

namespace fsam {

nlohmann::json to_json(const MetricsRecord& record, bool with_wall_time) {
  nlohmann::json j;
  j["step"] = record.step;
  j["epoch"] = record.epoch;
  j["loss"] = record.loss;
  j["ce"] = record.ce;
  j["dice_loss"] = record.dice_loss;
  j["lr"] = record.lr;
  j["val_dsc"] = record.val_dsc ? nlohmann::json(*record.val_dsc) : nlohmann::json(nullptr);
  if (with_wall_time) j["wall_time"] = record.wall_time;
  return j;
}

std::string metrics_line(const MetricsRecord& record) { return to_json(record).dump(); }

Index epoch_budget(const FSAMConfig& config) { return std::min(config.early_stop_epoch, config.max_epochs); }

Index steps_per_epoch(Index num_train, Index batch_size) {
  require(num_train > 0 && batch_size > 0, ErrorKind::EmptyInput, "steps_per_epoch: empty training set");
  return (num_train + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Index epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, 0x45504f43 + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

std::string rng_state(std::uint64_t seed, Index next_epoch) {
  return nlohmann::json{{"seed", seed}, {"next_epoch", next_epoch}}.dump();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

FitResult fit(FSAMModel& model, std::span<const Sample> train, std::span<const Sample> val, const FitOptions& options) {
  const FSAMConfig& cfg = model.config();
  cfg.validate();
  require(!train.empty(), ErrorKind::EmptyInput, "fit: empty training set");
  for (const auto& s : train)
    require(s.mask.rows() == cfg.vit.image_size && s.mask.cols() == cfg.vit.image_size, ErrorKind::DimensionMismatch,
            "fit: sample " + s.id + " does not match the configured image size");

  const Index per_epoch = steps_per_epoch(static_cast<Index>(train.size()), cfg.batch_size);
  const Index epochs = epoch_budget(cfg);
  Index total_steps = per_epoch * epochs;
  if (options.max_steps) total_steps = std::min(total_steps, *options.max_steps);

  AdamW optimizer(cfg.weight_decay);
  FitResult result;
  double best_dsc = -1.0;
  const auto start = std::chrono::steady_clock::now();
  Index step = 0;

  for (Index epoch = 0; epoch < epochs && step < total_steps; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    MetricsRecord record;
    for (Index b = 0; b < per_epoch && step < total_steps; ++b) {
      const auto first = static_cast<std::size_t>(b * cfg.batch_size);
      const auto last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(last - first);

      model.parameters().zero_grad();
      LossTerms batch_terms;
      for (std::size_t i = first; i < last; ++i) {
        const Sample& s = train[order[i]];
        const auto trace = model.trace(s.image);
        Mat dlogits;
        const LossTerms terms = hybrid_loss(trace.logits, s.mask, cfg.lambda, &dlogits);
        require(std::isfinite(terms.total), ErrorKind::NonFinite,
                "fit: non-finite loss at step " + std::to_string(step));
        batch_terms.total += terms.total * inv_batch;
        batch_terms.ce += terms.ce * inv_batch;
        batch_terms.dice_loss += terms.dice_loss * inv_batch;
        dlogits *= inv_batch;
        model.backward(trace, dlogits);
      }
      const double lr = learning_rate(step, cfg.lr, cfg.warmup_steps, total_steps);
      optimizer.step(model.parameters(), lr);

      record = MetricsRecord{};
      record.step = step;
      record.epoch = epoch;
      record.loss = batch_terms.total;
      record.ce = batch_terms.ce;
      record.dice_loss = batch_terms.dice_loss;
      record.lr = lr;
      ++step;
      const bool epoch_done = b + 1 == per_epoch || step == total_steps;
      if (!epoch_done) {
        record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.records.push_back(record);
        if (options.on_record) options.on_record(record);
      }
    }

    // The epoch's final record carries the validation scores.
    double score = 0.0;
    if (!val.empty()) {
      record.val_dsc = per_class_dice(model, val);
      score = mean_of(*record.val_dsc);
    }
    record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.records.push_back(record);
    if (options.on_record) options.on_record(record);

    result.epochs = epoch + 1;
    const bool improved = val.empty() || score > best_dsc;
    if (improved) {
      best_dsc = val.empty() ? 0.0 : score;
      result.best = capture_checkpoint(model, epoch + 1, best_dsc, rng_state(cfg.seed, epoch + 1), options.source_domain);
    }
    if (options.on_epoch_end) options.on_epoch_end(epoch, model);
  }

  result.steps = step;
  result.last = capture_checkpoint(model, result.epochs, std::max(best_dsc, 0.0), rng_state(cfg.seed, result.epochs),
                                   options.source_domain);
  return result;
}

}  // namespace fsam
