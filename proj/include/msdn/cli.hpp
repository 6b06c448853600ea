#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msdn::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// Runs one command line (without the program name). Machine output goes to
// out, diagnostics to err; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Long option names accepted by a subcommand, e.g. {"--ckpt", "--ms", ...}.
std::vector<std::string> command_options(const std::string& subcommand);

std::vector<std::string> command_names();

}  // namespace msdn::cli
