#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace moldgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point shared by the executable and the tests. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// key=value lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> parse_config(const std::string& text);

/// Record of one command run: effective config as key=value lines (usable
/// as --config) followed by commented artifact hashes.
struct Manifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::filesystem::path> artifacts;

  std::string text(const std::filesystem::path& base) const;
  void write(const std::filesystem::path& path) const;
};

}  // namespace moldgan::cli
