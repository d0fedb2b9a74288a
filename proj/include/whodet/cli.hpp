#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace whodet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `whodet` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on runtime failure and 2 on usage or validation
/// errors (including feature-pipeline mismatches).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace whodet
