#pragma once

#include <cstdint>
#include <exception>
#include <string>
#include <vector>

namespace subswap {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Parses argv, runs one subcommand and returns the process exit code.
/// Failures print {"code","message","context"} JSON on stderr.
int dispatch(int argc, char** argv);

std::string error_json(const std::exception& e);

struct SelftestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite behind the `selftest` subcommand.
std::vector<SelftestCheck> run_selftest(std::uint64_t seed);

}  // namespace subswap
