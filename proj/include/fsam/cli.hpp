#pragma once

#include <filesystem>
#include <string>

#include "fsam/error.hpp"

namespace fsam::cli {

/// 0 success, 1 runtime failure, 2 usage or configuration failure.
int exit_code_for(ErrorKind kind);

/// Output directory: explicit flag, else the configured value, else
/// $FSAM_OUT_DIR/<command>, else ./fsam_out/<command>.
std::filesystem::path resolve_out_dir(const std::string& flag, const std::string& configured,
                                      const std::string& command);

/// Entry point of the `fsam` tool. Diagnostics go to stderr as a single line
/// `error: kind=<kind> message=<text>`.
int run(int argc, const char* const* argv);

}  // namespace fsam::cli
