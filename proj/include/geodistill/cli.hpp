#pragma once

#include <map>
#include <string>
#include <vector>

namespace geodistill::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one subcommand. Returns 0 on success; on failure prints
/// "error: kind=<kind> message=<text>" to stderr and returns nonzero
/// (2 for command-line and config problems, 1 otherwise).
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);

}  // namespace geodistill::cli
