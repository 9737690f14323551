#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fundus {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable that supplies the default output directory.
inline constexpr const char* kOutDirEnv = "FUNDUS_OUT_DIR";

/// Runs the command line `args` (args[0] is the program name) and returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fundus
