#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace proker::cli {

/// Exit codes: 0 success, 1 assertion flag failed, 2 input/config error,
/// 3 numerical/solver error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitAssertion = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace proker::cli
