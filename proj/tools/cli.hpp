#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cpdefer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one conf-deferral invocation. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cpdefer::cli
