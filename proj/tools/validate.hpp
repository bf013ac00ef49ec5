#ifndef BLOCKFETCH_TOOLS_VALIDATE_HPP
#define BLOCKFETCH_TOOLS_VALIDATE_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace blockfetch::cli {

struct CheckResult {
    std::string suite;
    bool passed = true;
    std::string detail;
};

struct ValidateOptions {
    std::uint64_t seed = 0;
    std::uint64_t coverage_configs = 200;
    std::uint64_t coverage_max_rows = 10'000;
    std::uint32_t partition_max_ranks = 8;
    std::uint32_t partition_max_workers = 8;
    std::uint64_t partition_max_fetches = 1000;
    std::uint64_t sandwich_minibatches = 10'000;
    /// Corrupt one byte of the scratch store before its integrity check.
    bool inject_corruption = false;
    /// Scratch directory for temporary stores; empty = system temp dir.
    std::filesystem::path scratch;
};

std::vector<CheckResult> run_validation(const ValidateOptions& options);

// Individual suites, each returning one result per failure (or one pass).
std::vector<CheckResult> check_coverage(const ValidateOptions& options);
std::vector<CheckResult> check_determinism(const ValidateOptions& options);
std::vector<CheckResult> check_partition(const ValidateOptions& options);
std::vector<CheckResult> check_sandwich(const ValidateOptions& options);
std::vector<CheckResult> check_store(const ValidateOptions& options);

/// Every (rank, worker) share of `total` fetches over R ranks and W workers
/// is disjoint from the others and together they cover [0, total).
bool partition_covers(std::uint32_t ranks, std::uint32_t workers, std::uint64_t total);

/// Plans built independently on each of `ranks` threads from the seed
/// broadcast by rank 0 serialize to identical bytes.
bool rank_plans_identical(std::uint32_t ranks, std::uint64_t seed);

/// Flips one byte in the values section of `shard` (XOR 0xFF).
void corrupt_shard_byte(const std::filesystem::path& shard);

}  // namespace blockfetch::cli

#endif  // BLOCKFETCH_TOOLS_VALIDATE_HPP
