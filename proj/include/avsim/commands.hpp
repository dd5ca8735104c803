#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace avsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

// Entry point of the `avsim` tool. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "3", "0,4,9", "10-19", "1,5-7" -> seed list (ranges inclusive). Throws UserError.
std::vector<std::uint64_t> parse_seeds(const std::string& text);

// episode_*.avep files of a dataset directory, sorted by name.
std::vector<std::filesystem::path> dataset_episodes(const std::filesystem::path& dir);

}  // namespace avsim::cli
