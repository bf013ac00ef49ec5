// Acceptance run: prints one PASS/FAIL line per criterion and exits 1 if any
// criterion fails. The throughput criteria use a >= 5 GB store cached under
// the build directory (generated on first use, several minutes).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blockfetch/bench.hpp"
#include "blockfetch/dist.hpp"
#include "blockfetch/experiments.hpp"
#include "blockfetch/rng.hpp"
#include "blockfetch/sampling.hpp"
#include "blockfetch/store.hpp"
#include "blockfetch/theory.hpp"
#include "support.hpp"
#include "validate.hpp"

using namespace blockfetch;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kBoundsTol = 0.01;
constexpr double kSimF1MeanLo = 1.61, kSimF1MeanHi = 1.91, kSimF1StdLo = 0.25, kSimF1StdHi = 0.41;
constexpr double kSimF256MeanLo = 3.56, kSimF256MeanHi = 3.66, kSimF256StdMax = 0.12;
constexpr double kPipelineHighMin = 3.55, kPipelineBlockMax = 0.05, kPipelineRandomTol = 0.05;
constexpr double kSandwichSe = 3.0;
constexpr double kThroughputRatio = 20.0, kPlateauTol = 0.20, kStreamingRatio = 3.0;
constexpr double kF1MatchSigma = 2.0, kF1BeatSigma = 3.0;
constexpr double kGradRelTol = 1e-4;
constexpr std::uint64_t kBenchStoreBytes = 5'000'000'000ULL;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

SamplerConfig make(std::uint64_t n, std::uint64_t b, std::uint64_t m, std::uint64_t f, std::uint64_t seed,
                   Strategy s = BlockShuffling{}) {
    SamplerConfig cfg;
    cfg.n = n;
    cfg.block_size = b;
    cfg.batch_size = m;
    cfg.fetch_factor = f;
    cfg.seed = seed;
    cfg.strategy = std::move(s);
    return cfg;
}

// ---------------------------------------------------------------------------

Outcome epoch_coverage() {
    const auto t0 = Clock::now();
    Xoshiro256 rng(20240601);
    for (int t = 0; t < 200; ++t) {
        const std::uint64_t n = 1 + rng.below(100'000);
        const auto cfg = make(n, 1 + rng.below(2048), 1 + rng.below(512), 1 + rng.below(64), rng());
        const auto plan = build_plan(cfg, rng.below(8));
        std::vector<char> seen(n, 0);
        std::uint64_t count = 0;
        for (const auto& fs : plan.fetch_batches)
            for (auto i : fs.indices) {
                if (i >= n || seen[i]) return {false, "config " + std::to_string(t) + " repeats or overflows row " + std::to_string(i)};
                seen[i] = 1;
                ++count;
            }
        if (count != n) return {false, "config " + std::to_string(t) + " misses rows"};
    }
    const double secs = seconds_since(t0);
    return {secs < 60.0, "200 configs, " + fixed(secs, 2) + " s"};
}

Outcome bounds_reproduction() {
    const auto b = bounds(tahoe_like(), 64, 16);
    const bool ok = std::abs(b.lower - 1.43) <= kBoundsTol && std::abs(b.upper - 3.63) <= kBoundsTol;
    return {ok, "lower " + fixed(b.lower) + ", upper " + fixed(b.upper)};
}

Outcome simulated_f1() {
    const auto t0 = Clock::now();
    const auto r = simulate(tahoe_like(), 64, 16, 1, 10'000, 0);
    const double secs = seconds_since(t0);
    const bool ok = r.mean >= kSimF1MeanLo && r.mean <= kSimF1MeanHi && r.std >= kSimF1StdLo && r.std <= kSimF1StdHi &&
                    secs < 30.0;
    return {ok, "mean " + fixed(r.mean) + ", std " + fixed(r.std) + ", " + fixed(secs, 2) + " s"};
}

Outcome simulated_f256() {
    const auto r = simulate(tahoe_like(), 64, 16, 256, 10'000, 0);
    const bool ok = r.mean >= kSimF256MeanLo && r.mean <= kSimF256MeanHi && r.std <= kSimF256StdMax;
    return {ok, "mean " + fixed(r.mean) + ", std " + fixed(r.std)};
}

// Shared by criteria 5 and 6: pipeline entropy over the full grid on a
// 14-plate store with plate sizes in multiples of 1024 rows.
struct EntropyGrid {
    LabelDistribution p{std::vector<double>{1.0}};
    std::map<std::pair<std::uint64_t, std::uint64_t>, EntropyReport> cells;
};

const std::vector<std::uint64_t> kGridB{1, 4, 16, 64, 256, 1024};
const std::vector<std::uint64_t> kGridF{1, 4, 16, 64, 256, 1024};

EntropyGrid measure_grid(const fs::path& dir) {
    SynthSpec spec;
    spec.directory = dir;
    spec.n_rows = 1'048'576;
    spec.n_cols = 8;
    spec.shards = 14;
    spec.density = 0.125;
    spec.seed = 5;
    spec.plate_proportions = tahoe_like().p();
    spec.shard_alignment = 1024;
    const Manifest manifest = generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const StoreBackend backend(store, true);

    std::vector<double> sizes;
    for (const auto& s : manifest.shards) sizes.push_back(static_cast<double>(s.n_rows));
    EntropyGrid grid;
    grid.p = LabelDistribution::from_counts(sizes);
    for (auto b : kGridB)
        for (auto f : kGridF) {
            auto stream = make_stream(backend, make(store.size(), b, 64, f, 17 + b * 4096 + f));
            auto r = measure_pipeline_entropy(*stream, kPlateColumn, 14, 10'000);
            if (b <= 64) r.bounds = bounds(grid.p, 64, b, f);
            grid.cells[{b, f}] = r;
        }
    return grid;
}

Outcome pipeline_grid(const EntropyGrid& g) {
    const auto& high = g.cells.at({16, 256});
    const auto& block = g.cells.at({64, 1});
    const auto& rnd = g.cells.at({1, 1});
    const auto reference = simulate(g.p, 64, 1, 1, 10'000, 99);
    bool ok = high.mean >= kPipelineHighMin && std::abs(rnd.mean - reference.mean) <= kPipelineRandomTol;
    double worst_block = 0;
    for (auto b : kGridB)
        if (b >= 64) worst_block = std::max(worst_block, g.cells.at({b, 1}).mean);
    ok = ok && block.mean <= kPipelineBlockMax && worst_block <= kPipelineBlockMax;
    return {ok, "(16,256) " + fixed(high.mean) + "; max over b>=m*f at f=1 " + fixed(worst_block) + "; (1,1) " +
                    fixed(rnd.mean) + " vs random reference " + fixed(reference.mean)};
}

Outcome sandwich(const EntropyGrid& g) {
    std::vector<std::string> bad;
    std::size_t checked = 0, na = 0;
    for (const auto& [key, r] : g.cells) {
        if (!r.bounds) {
            ++na;
            continue;
        }
        ++checked;
        if (!r.within_bounds(kSandwichSe)) {
            std::ostringstream os;
            os << "(b=" << key.first << ",f=" << key.second << ") " << fixed(r.mean) << " not in ["
               << fixed(r.bounds->lower) << ", " << fixed(r.bounds->upper) << "] +- " << fixed(kSandwichSe * r.se);
            bad.push_back(os.str());
        }
    }
    std::string detail = std::to_string(checked) + " cells checked, " + std::to_string(na) + " with b>m not applicable, " +
                         std::to_string(bad.size()) + " outside";
    for (std::size_t i = 0; i < bad.size(); ++i) detail += (i == 0 ? ": " : "; ") + bad[i];
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------

fs::path bench_store_dir() { return fs::path(BLOCKFETCH_BUILD_DIR) / "bench_store"; }

SynthSpec bench_store_spec() {
    SynthSpec spec;
    spec.directory = bench_store_dir();
    spec.n_rows = 3'300'000;
    spec.n_cols = 4096;
    spec.shards = 14;
    spec.density = 0.05;
    spec.seed = 11;
    return spec;
}

ChunkedStore open_bench_store() {
    const auto spec = bench_store_spec();
    const auto manifest = spec.directory / kManifestFileName;
    if (fs::exists(manifest)) {
        try {
            auto store = ChunkedStore::open(manifest, OpenOptions{.verify = false});
            if (store.size() == spec.n_rows && store.manifest().n_cols == spec.n_cols &&
                store.bytes_on_disk() >= kBenchStoreBytes)
                return store;
        } catch (const StoreError&) {
        }
    }
    std::cerr << "generating the throughput store in " << spec.directory << " ...\n";
    fs::remove_all(spec.directory);
    generate_synthetic(spec);
    return ChunkedStore::open(manifest, OpenOptions{.verify = false});
}

BenchResult bench(const ChunkedStore& store, const std::string& strategy, std::uint64_t b, std::uint64_t f) {
    BenchOptions opt;
    opt.batch_size = 64;
    opt.warmup_seconds = 3.0;
    opt.measure_seconds = 12.0;
    opt.drop_page_cache = true;
    const auto r = run_bench_cell(store, BenchCell{strategy, b, f, 1}, opt);
    std::cerr << "  " << strategy << " b=" << b << " f=" << f << ": " << fixed(r.samples_per_sec, 0) << " rows/s\n";
    return r;
}

Outcome throughput(const ChunkedStore& store) {
    const double gb = static_cast<double>(store.bytes_on_disk()) / 1e9;
    const double base = bench(store, "block_shuffling", 1, 1).samples_per_sec;
    const double big = bench(store, "block_shuffling", 1024, 64).samples_per_sec;
    const double at_mf = bench(store, "block_shuffling", 1024, 16).samples_per_sec;
    const double at_4mf = bench(store, "block_shuffling", 4096, 16).samples_per_sec;
    const double ratio = big / base;
    const double plateau = at_4mf / at_mf;
    const bool ok = store.bytes_on_disk() >= kBenchStoreBytes && ratio >= kThroughputRatio &&
                    std::abs(plateau - 1.0) <= kPlateauTol;
    return {ok, fixed(gb, 2) + " GB store; (1024,64)/(1,1) = " + fixed(ratio, 2) + "x (need >= " +
                    fixed(kThroughputRatio, 0) + "x); plateau (4096,16)/(1024,16) = " + fixed(plateau, 3)};
}

Outcome streaming_fetch(const ChunkedStore& store) {
    const double f1 = bench(store, "streaming", 1, 1).samples_per_sec;
    const double f1024 = bench(store, "streaming", 1, 1024).samples_per_sec;
    const double ratio = f1024 / f1;
    return {ratio >= kStreamingRatio, "f=1024 / f=1 = " + fixed(ratio, 2) + "x (need >= " + fixed(kStreamingRatio, 0) + "x)"};
}

// ---------------------------------------------------------------------------

// Sorted block ids of a fetch set, or empty if any two are adjacent.
std::vector<std::uint64_t> isolated_blocks(const std::vector<RowIndex>& idx, std::uint64_t b) {
    std::set<std::uint64_t> blocks;
    for (auto i : idx) blocks.insert(i / b);
    std::vector<std::uint64_t> v(blocks.begin(), blocks.end());
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] == v[k - 1] + 1) return {};
    return v;
}

Outcome io_accounting() {
    testing::TempDir dir("acceptance-io");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 65'536;
    spec.n_cols = 4;
    spec.shards = 1;
    spec.density = 0.5;
    spec.seed = 2;
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const StoreBackend backend(store);

    std::size_t checked = 0;
    struct Case {
        std::uint64_t b, m, f;
    };
    for (const Case c : {Case{16, 64, 1}, Case{16, 64, 10}, Case{64, 64, 4}, Case{8, 64, 2}, Case{128, 64, 8}}) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            const auto cfg = make(store.size(), c.b, c.m, c.f, seed);
            const auto plan = build_plan(cfg, 0);
            const std::uint64_t expected = blocks_per_fetch(cfg);
            auto before = store.io_counters();
            auto stream = make_stream(backend, cfg);
            std::uint64_t current = plan.fetch_batches.size();
            while (auto mb = stream->next()) {
                if (mb->fetch_position == current) continue;
                current = mb->fetch_position;
                const auto after = store.io_counters();
                const auto delta = (after - before).range_reads;
                before = after;
                const auto& fs = plan.fetch_batches[current];
                if (fs.indices.size() != cfg.fetch_rows() || c.b > cfg.fetch_rows()) continue;
                if (isolated_blocks(fs.indices, c.b).empty()) continue;
                ++checked;
                if (delta != expected)
                    return {false, "b=" + std::to_string(c.b) + " f=" + std::to_string(c.f) + " fetch " +
                                       std::to_string(current) + ": " + std::to_string(delta) + " reads, expected " +
                                       std::to_string(expected)};
            }
        }
    }
    return {checked > 0, std::to_string(checked) + " fetches with non-adjacent blocks, each ceil(m*f/b) range reads"};
}

Outcome partition() {
    for (std::uint32_t R = 1; R <= 8; ++R)
        for (std::uint32_t W = 1; W <= 8; ++W)
            for (std::uint64_t total = 0; total <= 1000; ++total)
                if (!cli::partition_covers(R, W, total))
                    return {false, "R=" + std::to_string(R) + " W=" + std::to_string(W) + " total=" + std::to_string(total)};
    for (std::uint32_t R = 1; R <= 8; ++R)
        if (!cli::rank_plans_identical(R, 0xC0FFEE)) return {false, "rank plans differ at R=" + std::to_string(R)};
    return {true, "64 x 1001 layouts disjoint and complete; plans identical for R=1..8"};
}

// ---------------------------------------------------------------------------

Outcome classifier() {
    const auto t0 = Clock::now();
    testing::TempDir dir("acceptance-train");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 200'000;
    spec.n_cols = 256;
    spec.shards = 14;
    spec.density = 1.0;
    spec.seed = 7;
    spec.labels = ClusteredLabels{27, 4, true};
    spec.signal = ClassSignal{0.3, 0.3, 1.0};
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);

    ComparisonSpec cs;
    cs.batch_size = 64;
    cs.train.adam.learning_rate = 1e-3;
    cs.seeds = {0, 1};
    cs.tasks = {"fine"};
    const auto summary = summarize_runs(compare_strategies(store, standard_strategies(64), cs));
    std::map<std::string, StrategySummary> by;
    for (const auto& s : summary) by[s.strategy] = s;
    auto pooled = [](const StrategySummary& a, const StrategySummary& b) {
        return std::sqrt((a.std * a.std + b.std * b.std) / 2.0);
    };
    const auto& block = by.at("block_shuffling");
    const auto& rnd = by.at("random");
    bool ok = std::abs(block.mean - rnd.mean) <= kF1MatchSigma * pooled(block, rnd);
    std::string detail = "block " + fixed(block.mean) + "+-" + fixed(block.std) + ", random " + fixed(rnd.mean) + "+-" +
                         fixed(rnd.std);
    for (const char* s : {"streaming", "streaming_buffered"}) {
        const auto& st = by.at(s);
        detail += std::string(", ") + s + " " + fixed(st.mean) + "+-" + fixed(st.std);
        ok = ok && block.mean - st.mean > kF1BeatSigma * pooled(block, st) &&
             rnd.mean - st.mean > kF1BeatSigma * pooled(rnd, st);
    }
    const double secs = seconds_since(t0);
    detail += "; " + fixed(secs, 1) + " s";
    return {ok && secs < 15 * 60, detail};
}

Outcome gradient_check() {
    Xoshiro256 rng(12);
    LinearModel model(6, 4);
    for (auto& w : model.weights) w = 0.5 * rng.normal();
    for (auto& b : model.bias) b = 0.5 * rng.normal();
    DenseRows x;
    x.n_cols = 6;
    for (int i = 0; i < 10 * 6; ++i) x.data.push_back(static_cast<float>(rng.normal()));
    std::vector<std::uint32_t> y;
    for (int i = 0; i < 10; ++i) y.push_back(static_cast<std::uint32_t>(rng.below(4)));

    const auto lg = softmax_cross_entropy(model, x, y);
    double worst = 0;
    auto probe = [&](double& param, double analytic) {
        const double keep = param, h = 1e-5;
        param = keep + h;
        const double up = softmax_cross_entropy(model, x, y).loss;
        param = keep - h;
        const double down = softmax_cross_entropy(model, x, y).loss;
        param = keep;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-8, std::abs(numeric) + std::abs(analytic)));
    };
    for (std::size_t i = 0; i < model.weights.size(); ++i) probe(model.weights[i], lg.grad_weights[i]);
    for (std::size_t i = 0; i < model.bias.size(); ++i) probe(model.bias[i], lg.grad_bias[i]);
    char buf[64];
    std::snprintf(buf, sizeof buf, "max relative error %.2e over 28 parameters", worst);
    return {worst <= kGradRelTol, buf};
}

Outcome format_golden() {
    const fs::path golden = fs::path(BLOCKFETCH_TEST_DATA) / "golden_shard.bfs";
    const ShardData d = load_shard(golden);
    const bool contents = d.rows.n_cols == 5 && d.label_count == 3 &&
                          d.rows.indptr == std::vector<std::uint64_t>{0, 2, 2, 5, 6} &&
                          d.rows.indices == std::vector<std::uint32_t>{0, 3, 1, 2, 4, 4} &&
                          d.rows.values == std::vector<float>{1.0f, -2.5f, 0.5f, 0.25f, 8.0f, -0.125f} &&
                          d.labels == std::vector<std::uint16_t>{2, 0, 1, 2};
    if (!contents) return {false, "fixture contents differ"};

    testing::TempDir dir("acceptance-format");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 5000;
    spec.n_cols = 64;
    spec.shards = 5;
    spec.density = 0.2;
    spec.seed = 13;
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const RowRange all{0, store.size()};
    const auto read = store.read_rows(std::span(&all, 1));
    std::uint64_t row = 0;
    for (std::uint32_t s = 0; s < spec.shards; ++s) {
        const ShardData expect = synthesize_shard(spec, s);
        for (std::size_t r = 0; r < expect.rows.rows(); ++r, ++row) {
            const auto lo = expect.rows.indptr[r], hi = expect.rows.indptr[r + 1];
            const auto rlo = read.rows.indptr[row], rhi = read.rows.indptr[row + 1];
            if (hi - lo != rhi - rlo || read.labels[row] != expect.labels[r] ||
                !std::equal(expect.rows.indices.begin() + lo, expect.rows.indices.begin() + hi,
                            read.rows.indices.begin() + rlo) ||
                std::memcmp(expect.rows.values.data() + lo, read.rows.values.data() + rlo, (hi - lo) * sizeof(float)) != 0)
                return {false, "row " + std::to_string(row) + " differs after round trip"};
        }
    }
    return {row == store.size(), "fixture parsed exactly; " + std::to_string(row) + " generated rows read back bit-equal"};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << ": " << o.detail << std::endl;
    };

    report(1, "epoch coverage", epoch_coverage);
    report(2, "bounds reproduction", bounds_reproduction);
    report(3, "simulated entropy f=1", simulated_f1);
    report(4, "simulated entropy f=256", simulated_f256);

    std::optional<EntropyGrid> grid;
    std::string grid_error;
    {
        testing::TempDir dir("acceptance-entropy");
        try {
            grid = measure_grid(dir.path());
        } catch (const std::exception& e) {
            grid_error = e.what();
        }
    }
    report(5, "pipeline entropy grid", [&] { return grid ? pipeline_grid(*grid) : Outcome{false, grid_error}; });
    report(6, "sandwich property", [&] { return grid ? sandwich(*grid) : Outcome{false, grid_error}; });

    std::optional<ChunkedStore> store;
    std::string store_error;
    try {
        store.emplace(open_bench_store());
    } catch (const std::exception& e) {
        store_error = e.what();
    }
    report(7, "throughput direction", [&] { return store ? throughput(*store) : Outcome{false, store_error}; });
    report(8, "streaming fetch factor", [&] { return store ? streaming_fetch(*store) : Outcome{false, store_error}; });

    report(9, "I/O accounting", io_accounting);
    report(10, "distribution partition", partition);
    report(11, "classifier comparison", classifier);
    report(12, "gradient check", gradient_check);
    report(13, "format golden test", format_golden);

    std::cout << (13 - failures) << "/13 criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
