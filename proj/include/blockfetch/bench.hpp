#ifndef BLOCKFETCH_BENCH_HPP
#define BLOCKFETCH_BENCH_HPP

#include <cstdint>
#include <string>

#include "blockfetch/sampling.hpp"

namespace blockfetch {

class ChunkedStore;

struct BenchCell {
    std::string strategy = "block_shuffling";  // block_shuffling | streaming
    std::uint64_t block_size = 1;
    std::uint64_t fetch_factor = 1;
    std::uint32_t workers = 1;
};

struct BenchOptions {
    std::uint64_t batch_size = 64;
    std::uint64_t seed = 0;
    double warmup_seconds = 3.0;
    double measure_seconds = 12.0;
    /// Evict the store from the page cache before the cell starts.
    bool drop_page_cache = true;
    /// This process serves rank `rank` of `world_size`.
    std::uint32_t world_size = 1;
    std::uint32_t rank = 0;
};

struct BenchResult {
    BenchCell cell;
    double samples_per_sec = 0;
    std::uint64_t samples = 0;
    std::uint64_t range_reads = 0;  ///< during the measure window
    std::uint64_t bytes_read = 0;   ///< during the measure window
    double duration = 0;            ///< warmup plus measure, seconds
};

/// Sampler configuration for a cell over a store of n rows.
SamplerConfig bench_config(const BenchCell& cell, const BenchOptions& options, std::uint64_t n);

/**
 * Pulls minibatches from the cell's stream, discarding them, for the warmup
 * window and then counts rows for the measure window. Epochs are restarted
 * as needed.
 */
BenchResult run_bench_cell(const ChunkedStore& store, const BenchCell& cell, const BenchOptions& options);

}  // namespace blockfetch

#endif  // BLOCKFETCH_BENCH_HPP
