#pragma once

// Checkpoint archive layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "FSAMCKPT"
//   offset 8   u32       format version (1)
//   offset 12  u64       manifest length L
//   offset 20  L bytes   manifest, UTF-8 JSON with sorted keys:
//                          format_version, config, epoch, best_val_dsc,
//                          rng_state, source_domain, payload_fnv1a64,
//                          tensors: [{name, dtype, shape, offset, nbytes}]
//   then       payload   tensors back to back, row-major, float64 or float32
//
// Saving the same state twice yields identical bytes.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fsam/seg_model.hpp"

namespace fsam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FSAMConfig config;
  std::vector<std::pair<std::string, Mat>> tensors;
  Index epoch = 0;
  double best_val_dsc = 0.0;
  std::string rng_state;
  std::string source_domain;

  const Mat* find(std::string_view name) const;
};

Checkpoint capture_checkpoint(const FSAMModel& model, Index epoch, double best_val_dsc, std::string rng_state = {},
                              std::string source_domain = {});

/// Copies every tensor into the model; names and shapes must match exactly.
void restore_checkpoint(FSAMModel& model, const Checkpoint& checkpoint);
std::unique_ptr<FSAMModel> model_from_checkpoint(const Checkpoint& checkpoint);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws `Integrity` on any structural or checksum failure.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace fsam
