#include "validate.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "blockfetch/dist.hpp"
#include "blockfetch/pipeline.hpp"
#include "blockfetch/rng.hpp"
#include "blockfetch/sampling.hpp"
#include "blockfetch/store.hpp"
#include "blockfetch/theory.hpp"

namespace blockfetch::cli {

namespace {

SamplerConfig random_config(Xoshiro256& rng, std::uint64_t max_rows) {
    SamplerConfig cfg;
    cfg.n = 1 + rng.below(max_rows);
    cfg.block_size = 1 + rng.below(std::min<std::uint64_t>(cfg.n, 2048));
    cfg.batch_size = 1 + rng.below(256);
    cfg.fetch_factor = 1 + rng.below(64);
    cfg.seed = rng();
    cfg.strategy = BlockShuffling{};
    return cfg;
}

std::string describe(const SamplerConfig& cfg) {
    std::ostringstream os;
    os << "n=" << cfg.n << " b=" << cfg.block_size << " m=" << cfg.batch_size << " f=" << cfg.fetch_factor
       << " seed=" << cfg.seed;
    return os.str();
}

std::vector<CheckResult> pass_or(std::string suite, std::vector<CheckResult> failures, std::string summary) {
    if (failures.empty()) return {{std::move(suite), true, std::move(summary)}};
    return failures;
}

std::filesystem::path scratch_dir(const ValidateOptions& options, std::string_view name) {
    const auto base = options.scratch.empty() ? std::filesystem::temp_directory_path() : options.scratch;
    return base / ("blockfetch-validate-" + std::string(name) + "-" + std::to_string(mix64(options.seed) & 0xFFFFFF) +
                   "-" + std::to_string(::getpid()));
}

}  // namespace

std::vector<CheckResult> check_coverage(const ValidateOptions& options) {
    std::vector<CheckResult> failures;
    Xoshiro256 rng(derive_seed(options.seed, "validate-coverage", 0));
    for (std::uint64_t i = 0; i < options.coverage_configs; ++i) {
        const SamplerConfig cfg = random_config(rng, options.coverage_max_rows);
        const IndexPlan plan = build_plan(cfg, 0);
        auto flat = plan.flatten();
        std::sort(flat.begin(), flat.end());
        bool ok = flat.size() == cfg.n;
        for (std::uint64_t k = 0; ok && k < cfg.n; ++k) ok = flat[k] == k;
        for (std::size_t j = 0; ok && j + 1 < plan.fetch_batches.size(); ++j)
            ok = plan.fetch_batches[j].indices.size() == cfg.fetch_rows();
        if (!ok) failures.push_back({"coverage", false, "plan does not cover [0, n) exactly once: " + describe(cfg)});
    }
    return pass_or("coverage", std::move(failures), std::to_string(options.coverage_configs) + " configurations");
}

std::vector<CheckResult> check_determinism(const ValidateOptions& options) {
    std::vector<CheckResult> failures;
    Xoshiro256 rng(derive_seed(options.seed, "validate-determinism", 0));
    for (int i = 0; i < 20; ++i) {
        const SamplerConfig cfg = random_config(rng, 5'000);
        if (build_plan(cfg, 3).serialize() != build_plan(cfg, 3).serialize())
            failures.push_back({"determinism", false, "plan differs between builds: " + describe(cfg)});
    }

    SamplerConfig cfg;
    cfg.n = 2'000;
    cfg.block_size = 8;
    cfg.batch_size = 16;
    cfg.fetch_factor = 4;
    cfg.seed = options.seed;
    MultiPayload data;
    IndexColumn ids(cfg.n);
    std::iota(ids.begin(), ids.end(), 0);
    data.add("id", std::move(ids));
    const InMemoryBackend backend(std::move(data));
    auto run = [&] {
        std::vector<std::uint64_t> out;
        auto stream = make_stream(backend, cfg, 1);
        while (auto mb = stream->next()) {
            const auto& id = mb->payload.get<IndexColumn>("id");
            if (id != mb->source_indices) failures.push_back({"determinism", false, "payload rows misaligned"});
            out.insert(out.end(), mb->source_indices.begin(), mb->source_indices.end());
            out.push_back(mb->fetch_position);
        }
        return out;
    };
    if (run() != run()) failures.push_back({"determinism", false, "pipeline output differs between runs"});

    const auto& p = tahoe_like();
    if (simulate(p, 64, 16, 4, 500, options.seed, 1).mean != simulate(p, 64, 16, 4, 500, options.seed, 4).mean)
        failures.push_back({"determinism", false, "simulation depends on thread count"});
    return pass_or("determinism", std::move(failures), "plans, pipeline, simulation");
}

bool partition_covers(std::uint32_t ranks, std::uint32_t workers, std::uint64_t total) {
    std::vector<std::uint8_t> seen(total, 0);
    for (std::uint32_t r = 0; r < ranks; ++r) {
        for (std::uint32_t w = 0; w < workers; ++w) {
            for (auto p : assign_fetches(total, Topology{ranks, r, workers, w})) {
                if (p >= total || seen[p]) return false;
                seen[p] = 1;
            }
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](std::uint8_t s) { return s == 1; });
}

bool rank_plans_identical(std::uint32_t ranks, std::uint64_t seed) {
    SamplerConfig cfg;
    cfg.n = 10'000;
    cfg.block_size = 16;
    cfg.batch_size = 64;
    cfg.fetch_factor = 8;
    SeedBroadcast channel;
    std::vector<std::vector<std::uint8_t>> bytes(ranks);
    std::vector<std::thread> threads;
    for (std::uint32_t r = 0; r < ranks; ++r) {
        threads.emplace_back([&, r] {
            SamplerConfig local = cfg;
            // Every rank starts from a different local seed.
            local.seed = shared_seed(Topology{ranks, r, 1, 0}, derive_seed(seed, "local", r), &channel);
            bytes[r] = build_plan(local, 0).serialize();
        });
    }
    for (auto& t : threads) t.join();
    return std::all_of(bytes.begin(), bytes.end(), [&](const auto& b) { return b == bytes[0]; });
}

std::vector<CheckResult> check_partition(const ValidateOptions& options) {
    std::vector<CheckResult> failures;
    for (std::uint32_t R = 1; R <= options.partition_max_ranks; ++R)
        for (std::uint32_t W = 1; W <= options.partition_max_workers; ++W)
            for (std::uint64_t total = 0; total <= options.partition_max_fetches; ++total)
                if (!partition_covers(R, W, total))
                    failures.push_back({"partition", false,
                                        "R=" + std::to_string(R) + " W=" + std::to_string(W) + " total=" +
                                            std::to_string(total) + ": shares overlap or miss a fetch"});
    for (std::uint32_t R = 1; R <= options.partition_max_ranks; ++R)
        if (!rank_plans_identical(R, options.seed))
            failures.push_back({"partition", false, "R=" + std::to_string(R) + ": rank plans differ"});
    return pass_or("partition", std::move(failures),
                   "R<=" + std::to_string(options.partition_max_ranks) + " W<=" +
                       std::to_string(options.partition_max_workers) +
                       " total<=" + std::to_string(options.partition_max_fetches));
}

std::vector<CheckResult> check_sandwich(const ValidateOptions& options) {
    std::vector<CheckResult> failures;
    const auto& p = tahoe_like();
    const std::uint64_t m = 64;
    std::size_t cells = 0;
    for (std::uint64_t b : {1, 4, 16, 64}) {
        for (std::uint64_t f : {1, 4, 16, 64, 256, 1024}) {
            ++cells;
            const auto r = simulate(p, m, b, f, options.sandwich_minibatches, derive_seed(options.seed, "sandwich", b * 4096 + f));
            if (!r.within_bounds(3.0)) {
                std::ostringstream os;
                os << "b=" << b << " f=" << f << ": mean " << r.mean << " (se " << r.se << ") outside ["
                   << r.bounds->lower << ", " << r.bounds->upper << "]";
                failures.push_back({"sandwich", false, os.str()});
            }
        }
    }
    return pass_or("sandwich", std::move(failures), std::to_string(cells) + " cells");
}

void corrupt_shard_byte(const std::filesystem::path& shard) {
    std::fstream file(shard, std::ios::in | std::ios::out | std::ios::binary);
    if (!file) throw StoreError(shard, std::nullopt, "cannot open for corruption");
    std::array<std::uint8_t, kShardHeaderSize> raw{};
    file.read(reinterpret_cast<char*>(raw.data()), raw.size());
    const ShardHeader h = parse_shard_header(raw, shard);
    const auto offset = static_cast<std::streamoff>(h.values_offset + (h.nnz * 4) / 2);
    char byte = 0;
    file.seekg(offset);
    file.get(byte);
    byte = static_cast<char>(byte ^ 0xFF);
    file.seekp(offset);
    file.put(byte);
}

std::vector<CheckResult> check_store(const ValidateOptions& options) {
    std::vector<CheckResult> failures;
    const auto dir = scratch_dir(options, "store");
    SynthSpec spec;
    spec.directory = dir;
    spec.n_rows = 300;
    spec.n_cols = 32;
    spec.shards = 3;
    spec.density = 0.3;
    spec.seed = options.seed;
    try {
        generate_synthetic(spec);
        const auto shard = dir / "shard_001.bfs";
        if (options.inject_corruption) corrupt_shard_byte(shard);

        {
            const auto store = ChunkedStore::open(dir / kManifestFileName);
            const RowRange all{0, store.size()};
            const auto batch = store.read_rows(std::span(&all, 1));
            SparseRows expected;
            expected.n_cols = spec.n_cols;
            for (std::uint32_t i = 0; i < spec.shards; ++i) {
                const auto part = synthesize_shard(spec, i);
                for (std::size_t r = 0; r < part.rows.rows(); ++r) {
                    const auto lo = part.rows.indptr[r], hi = part.rows.indptr[r + 1];
                    expected.append_row(std::span(part.rows.indices).subspan(lo, hi - lo),
                                        std::span(part.rows.values).subspan(lo, hi - lo));
                }
            }
            if (!(batch.rows == expected)) failures.push_back({"store", false, "round trip is not bit-equal"});
        }

        if (!options.inject_corruption) {
            corrupt_shard_byte(shard);
            bool detected = false;
            try {
                ChunkedStore::open(dir / kManifestFileName);
            } catch (const StoreError&) {
                detected = true;
            }
            if (!detected) failures.push_back({"store", false, "flipped byte in " + shard.string() + " was not detected"});
        }
    } catch (const std::exception& e) {
        failures.push_back({"store", false, e.what()});
    }
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    return pass_or("store", std::move(failures), "round trip and corruption detection");
}

std::vector<CheckResult> run_validation(const ValidateOptions& options) {
    std::vector<CheckResult> out;
    for (auto* suite : {&check_coverage, &check_determinism, &check_partition, &check_sandwich, &check_store}) {
        auto part = suite(options);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

}  // namespace blockfetch::cli
