#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace milsense {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitNumerical = 3,
};

// Runs the tool with `args` (without the program name). Subcommands:
// gen-data, design, evaluate, ablate-noise, compare.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace milsense
