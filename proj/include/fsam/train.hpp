#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsam/checkpoint.hpp"
#include "fsam/data.hpp"

namespace fsam {

/// One line of the metrics log. `val_dsc` is filled on the last step of an
/// epoch (one entry per foreground class).
struct MetricsRecord {
  Index step = 0;
  Index epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double dice_loss = 0.0;
  double lr = 0.0;
  std::optional<std::vector<double>> val_dsc;
  double wall_time = 0.0;
};

nlohmann::json to_json(const MetricsRecord& record, bool with_wall_time = true);
/// Compact JSON, keys sorted, no trailing newline.
std::string metrics_line(const MetricsRecord& record);

struct FitOptions {
  /// Hard cap on optimizer steps, on top of the epoch limits in the config.
  std::optional<Index> max_steps;
  std::string source_domain;
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(Index epoch, const FSAMModel&)> on_epoch_end;
};

struct FitResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<MetricsRecord> records;
  Index steps = 0;
  Index epochs = 0;
};

/// Number of epochs actually run: min(early_stop_epoch, max_epochs).
Index epoch_budget(const FSAMConfig& config);
Index steps_per_epoch(Index num_train, Index batch_size);

/// Sample order for an epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Index epoch);

/// AdamW on the trainable partition with warm-up and polynomial decay.
/// Validation DSC is measured after every epoch; `best` holds the state with
/// the highest mean foreground validation DSC (the last state when `val` is
/// empty).
FitResult fit(FSAMModel& model, std::span<const Sample> train, std::span<const Sample> val,
              const FitOptions& options = {});

}  // namespace fsam
