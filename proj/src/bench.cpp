#include "blockfetch/bench.hpp"

#include <chrono>

#include "blockfetch/dist.hpp"
#include "blockfetch/pipeline.hpp"
#include "blockfetch/store.hpp"

namespace blockfetch {

SamplerConfig bench_config(const BenchCell& cell, const BenchOptions& options, std::uint64_t n) {
    SamplerConfig cfg;
    cfg.n = n;
    cfg.block_size = cell.block_size;
    cfg.batch_size = options.batch_size;
    cfg.fetch_factor = cell.fetch_factor;
    cfg.seed = options.seed;
    if (cell.strategy == "block_shuffling") {
        cfg.strategy = BlockShuffling{};
    } else if (cell.strategy == "streaming") {
        cfg.strategy = Streaming{};
    } else {
        throw ConfigError("unknown bench strategy '" + cell.strategy + "'");
    }
    validate(cfg);
    return cfg;
}

BenchResult run_bench_cell(const ChunkedStore& store, const BenchCell& cell, const BenchOptions& options) {
    using clock = std::chrono::steady_clock;
    const SamplerConfig cfg = bench_config(cell, options, store.size());
    const StoreBackend backend(store);
    Topology topo;
    topo.world_size = options.world_size;
    topo.rank = options.rank;
    topo.workers_per_rank = cell.workers;

    if (options.drop_page_cache) store.drop_page_cache();

    std::uint64_t epoch = 0;
    auto stream = make_rank_stream(backend, cfg, epoch, topo);
    auto pull = [&]() -> std::uint64_t {
        auto mb = stream->next();
        if (!mb) {
            stream = make_rank_stream(backend, cfg, ++epoch, topo);
            mb = stream->next();
            if (!mb) throw ConfigError("this rank has no fetches to process");
        }
        return mb->size();
    };

    const auto start = clock::now();
    const auto warm_end = start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(options.warmup_seconds));
    while (clock::now() < warm_end) pull();

    const IoCounters io0 = store.io_counters();
    const auto t0 = clock::now();
    const auto measure_end = t0 + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(options.measure_seconds));
    std::uint64_t samples = 0;
    while (clock::now() < measure_end) samples += pull();
    const auto t1 = clock::now();
    const IoCounters io = store.io_counters() - io0;

    BenchResult r;
    r.cell = cell;
    r.samples = samples;
    const double measured = std::chrono::duration<double>(t1 - t0).count();
    r.samples_per_sec = measured > 0 ? static_cast<double>(samples) / measured : 0.0;
    r.range_reads = io.range_reads;
    r.bytes_read = io.bytes_read;
    r.duration = std::chrono::duration<double>(t1 - start).count();
    return r;
}

}  // namespace blockfetch
