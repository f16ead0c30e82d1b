#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sumforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Flat key=value settings; '#' starts a comment line.
using Settings = std::map<std::string, std::string>;

Settings parse_settings(std::string_view text, const std::string& origin);
Settings read_settings(const std::filesystem::path& path);

/// Written once per invocation as JSON.
struct RunManifest {
  std::string command;
  Settings config;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::string> outputs;

  std::string to_json() const;
};

/// --seed, then the config's seed key, then SUMFORGE_SEED, then 0.
std::uint64_t resolve_seed(const std::string& flag_value, const Settings& config);

/// Entry point. args excludes the program name. Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sumforge::cli
