#pragma once

#include <iosfwd>

namespace irtimpute {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitScorer = 3;

// Parses argv and runs one subcommand. Results printed to stdout go to
// `out`; usage text and error messages go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace irtimpute
