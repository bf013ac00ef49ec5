#ifndef BLOCKFETCH_TOOLS_CLI_HPP
#define BLOCKFETCH_TOOLS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace blockfetch::cli {

// Environment variables read when the matching flag is absent.
inline constexpr const char* kEnvRank = "BLOCKFETCH_RANK";
inline constexpr const char* kEnvWorldSize = "BLOCKFETCH_WORLD_SIZE";
inline constexpr const char* kEnvWorkers = "BLOCKFETCH_WORKERS";

// First line of every CSV the tool writes.
inline constexpr const char* kBenchSchema = "#schema=bench/1";
inline constexpr const char* kEntropySchema = "#schema=entropy/1";
inline constexpr const char* kTrainSchema = "#schema=train/1";
inline constexpr const char* kValidateSchema = "#schema=validate/1";

/// Parses arguments and runs one subcommand. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blockfetch::cli

#endif  // BLOCKFETCH_TOOLS_CLI_HPP
