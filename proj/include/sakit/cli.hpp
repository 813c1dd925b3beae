#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sakit::cli {

// argv[0] is the program name, argv[1] the subcommand. Settings resolve as
// environment (SAKIT_<KEY>) > flag > --config file > default. Returns 0 on
// success, 1 on usage errors, 2 on runtime failures. `env` replaces the
// process environment when given.
int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err,
                const std::optional<std::map<std::string, std::string>>& env = std::nullopt);

// Subcommand names in help order.
std::vector<std::string> subcommands();

// `SAKIT_` + upper-cased key with '-' -> '_'.
std::string env_name(const std::string& key);

}  // namespace sakit::cli
