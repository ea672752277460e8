#pragma once

#include <string>

#include "vitcat/config.hpp"

namespace vitcat::cli {

// Commands: gen-trace, preprocess, train, eval, simulate, gradcheck,
// variants. Returns the process exit code; throws the error types from
// errors.hpp on failure.
int run_command(const std::string& command, const RunConfig& cfg);

}  // namespace vitcat::cli
