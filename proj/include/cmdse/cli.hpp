#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cmdse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one `cmdse` invocation. `args` excludes the program name. Results go to
// `out`; usage text and diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmdse::cli
