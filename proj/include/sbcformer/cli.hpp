#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sbc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Runs one command line. `args` excludes the program name. Subcommands: classify, bench, count, verify,
/// export-random.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sbc::cli
