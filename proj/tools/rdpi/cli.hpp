#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace rdpi::cli {

/// Every configurable key with its default. A run config is this object with
/// values from --config and flag overrides applied on top.
nlohmann::json default_config();

/// Applies `overrides` to `base`. Unknown keys raise ConfigError; values are
/// coerced to the type of the default.
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides);

/// Parses argv (without the program name) and runs one subcommand. Returns
/// the process exit status; errors are reported on `err` as one JSON line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdpi::cli
