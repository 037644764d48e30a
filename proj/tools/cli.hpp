#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace maestro::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

// Runs one command line. argv[0] is the program name. Never throws.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace maestro::cli
