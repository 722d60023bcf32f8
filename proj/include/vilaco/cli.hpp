#pragma once

// Command-line front end: gen-data, train, eval, predict, report.
// Exit codes: 0 ok, 2 configuration, 3 I/O or dataset, 4 numerical abort.

#include <iosfwd>
#include <string>
#include <vector>

namespace vilaco {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumerical = 4;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// True when VILACO_DETERMINISTIC=1.
bool deterministic_from_env();

}  // namespace vilaco
