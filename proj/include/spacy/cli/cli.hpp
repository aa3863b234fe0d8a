#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spacy::cli {

enum ExitCode : int { kOk = 0, kBadArgs = 1, kIoFailure = 2, kInvalid = 3, kDiverged = 4 };

// args[0] is the program name. Subcommands: generate, train, eval, export.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spacy::cli
