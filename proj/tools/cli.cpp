#include "cli.hpp"

#include <unistd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>

#include "blockfetch/bench.hpp"
#include "blockfetch/dist.hpp"
#include "blockfetch/experiments.hpp"
#include "blockfetch/pipeline.hpp"
#include "blockfetch/store.hpp"
#include "blockfetch/theory.hpp"
#include "validate.hpp"

namespace blockfetch::cli {

namespace {

using json = nlohmann::json;

const std::vector<std::uint64_t> kGrid{1, 4, 16, 64, 256, 1024};

struct Globals {
    std::uint64_t seed = 0;
    std::string manifest;
    std::string out;
    std::string json_path;
    std::uint32_t workers = 1;
    std::uint32_t ranks = 1;
    std::uint32_t rank = 0;
    bool no_verify = false;
};

struct GenerateArgs {
    std::uint64_t rows = 200'000;
    std::uint64_t cols = 256;
    std::uint32_t shards = 14;
    double density = 1.0;
    bool tahoe_like = false;
    std::string labels = "plate";
    std::uint32_t classes = 27;
    std::uint32_t groups = 4;
    bool signal = false;
    double class_scale = ClassSignal{}.class_scale;
    double plate_scale = ClassSignal{}.plate_scale;
    double noise = ClassSignal{}.noise;
    std::uint64_t align = 1;
};

struct BenchArgs {
    std::vector<std::uint64_t> block_sizes = kGrid;
    std::vector<std::uint64_t> fetch_factors = kGrid;
    std::vector<std::string> strategies{"block_shuffling", "streaming"};
    std::uint64_t batch_size = 64;
    double warmup = 3.0;
    double measure = 12.0;
    bool drop_page_cache = false;
};

struct EntropyArgs {
    std::vector<std::uint64_t> block_sizes = kGrid;
    std::vector<std::uint64_t> fetch_factors = kGrid;
    std::uint64_t batch_size = 64;
    std::uint64_t minibatches = 10'000;
    std::string label = "plate";
};

struct ValidateArgs {
    bool inject_corruption = false;
};

struct TrainArgs {
    std::vector<std::string> strategies{"streaming", "streaming_buffered", "block_shuffling", "random"};
    std::vector<std::string> tasks{"fine", "broad"};
    std::uint64_t seeds = 2;
    double lr = 1e-3;
    std::uint64_t epochs = 1;
    std::uint64_t batch_size = 64;
    std::uint32_t test_shards = 1;
};

class Output {
public:
    Output(const std::string& path, std::ostream& fallback) {
        if (path.empty()) {
            os_ = &fallback;
        } else {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw std::runtime_error("cannot write " + path);
            os_ = file_.get();
        }
    }
    std::ostream& operator*() { return *os_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* os_;
};

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_json(const Globals& g, const json& doc) {
    if (g.json_path.empty()) return;
    std::ofstream f(g.json_path);
    if (!f) throw std::runtime_error("cannot write " + g.json_path);
    f << doc.dump(2) << '\n';
}

ChunkedStore open_store(const Globals& g) {
    if (g.manifest.empty()) throw std::runtime_error("--manifest is required");
    if (!std::filesystem::exists(g.manifest)) throw std::runtime_error("store not found: " + g.manifest);
    return ChunkedStore::open(g.manifest, OpenOptions{.verify = !g.no_verify});
}

std::uint64_t physical_memory() {
    const long pages = ::sysconf(_SC_PHYS_PAGES);
    const long page = ::sysconf(_SC_PAGESIZE);
    return pages > 0 && page > 0 ? static_cast<std::uint64_t>(pages) * static_cast<std::uint64_t>(page) : 0;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Globals& g, const GenerateArgs& a, std::ostream& out) {
    if (g.out.empty()) throw std::runtime_error("--out (store directory) is required");
    SynthSpec spec;
    spec.directory = g.out;
    spec.n_rows = a.rows;
    spec.n_cols = a.cols;
    spec.shards = a.shards;
    spec.density = a.density;
    spec.seed = g.seed;
    spec.shard_alignment = a.align;
    if (a.tahoe_like) {
        const auto& p = tahoe_like().p();
        if (a.shards != p.size()) throw std::runtime_error("--tahoe-like needs --shards " + std::to_string(p.size()));
        spec.plate_proportions = p;
    }
    if (a.labels == "clustered") {
        spec.labels = ClusteredLabels{a.classes, a.groups, true};
    }
    if (a.signal) spec.signal = ClassSignal{a.class_scale, a.plate_scale, a.noise};

    const Manifest m = generate_synthetic(spec);
    const auto path = std::filesystem::path(g.out) / kManifestFileName;
    std::vector<double> counts;
    for (const auto& s : m.shards) counts.push_back(static_cast<double>(s.n_rows));
    const double h = LabelDistribution::from_counts(counts).entropy_bits();
    out << path.string() << '\n';
    write_json(g, json{{"manifest", path.string()}, {"rows", m.total_rows()}, {"shards", m.shards.size()},
                       {"plate_entropy_bits", h}});
    return 0;
}

int cmd_bench(const Globals& g, const BenchArgs& a, std::ostream& out, std::ostream& err) {
    const ChunkedStore store = open_store(g);
    BenchOptions opt;
    opt.batch_size = a.batch_size;
    opt.seed = g.seed;
    opt.warmup_seconds = a.warmup;
    opt.measure_seconds = a.measure;
    opt.drop_page_cache = a.drop_page_cache;
    opt.world_size = g.ranks;
    opt.rank = g.rank;

    const std::uint64_t ram = physical_memory();
    const bool fits = store.bytes_on_disk() < ram;
    if (fits && !a.drop_page_cache)
        err << "note: the store (" << store.bytes_on_disk() << " bytes) fits in RAM; cached pages can hide I/O cost "
            << "(see --drop-page-cache-hint)\n";

    std::vector<BenchCell> cells;
    for (const auto& strategy : a.strategies) {
        if (strategy == "block_shuffling") {
            cells.push_back({strategy, 1, 1, g.workers});
            for (auto b : a.block_sizes)
                for (auto f : a.fetch_factors)
                    if (!(b == 1 && f == 1)) cells.push_back({strategy, b, f, g.workers});
        } else if (strategy == "streaming") {
            cells.push_back({strategy, 1, 1, g.workers});
            for (auto f : a.fetch_factors)
                if (f != 1) cells.push_back({strategy, 1, f, g.workers});
        } else {
            throw std::runtime_error("unknown strategy '" + strategy + "'");
        }
    }

    Output csv(g.out, out);
    *csv << kBenchSchema << '\n'
         << "strategy,b,f,workers,samples_per_sec,range_reads,bytes_read,duration,speedup\n";
    std::map<std::string, double> baseline;
    json rows = json::array();
    for (const auto& cell : cells) {
        const BenchResult r = run_bench_cell(store, cell, opt);
        if (!baseline.contains(cell.strategy)) baseline[cell.strategy] = r.samples_per_sec;
        const double base = baseline[cell.strategy];
        const double speedup = base > 0 ? r.samples_per_sec / base : 0.0;
        *csv << cell.strategy << ',' << cell.block_size << ',' << cell.fetch_factor << ',' << cell.workers << ','
             << fmt("%.1f", r.samples_per_sec) << ',' << r.range_reads << ',' << r.bytes_read << ','
             << fmt("%.3f", r.duration) << ',' << fmt("%.3f", speedup) << '\n';
        (*csv).flush();
        rows.push_back({{"strategy", cell.strategy}, {"b", cell.block_size}, {"f", cell.fetch_factor},
                        {"workers", cell.workers}, {"samples_per_sec", r.samples_per_sec},
                        {"range_reads", r.range_reads}, {"bytes_read", r.bytes_read}, {"duration", r.duration},
                        {"speedup", speedup}});
    }
    write_json(g, json{{"store_bytes", store.bytes_on_disk()}, {"ram_bytes", ram}, {"fits_in_ram", fits},
                       {"page_cache_dropped", a.drop_page_cache}, {"cells", rows}});
    return 0;
}

int cmd_entropy(const Globals& g, const EntropyArgs& a, std::ostream& out, std::ostream& err) {
    const ChunkedStore store = open_store(g);
    const Manifest& manifest = store.manifest();
    std::string column;
    std::vector<double> counts;
    if (a.label == "plate") {
        column = kPlateColumn;
        for (const auto& s : manifest.shards) counts.push_back(static_cast<double>(s.n_rows));
    } else {
        column = kLabelColumn;
        counts.assign(manifest.labels.size(), 0.0);
        const RowRange all{0, store.size()};
        for (auto l : store.read_rows(std::span(&all, 1), ReadOptions{.matrix = false}).labels) counts[l] += 1;
    }
    const LabelDistribution p = LabelDistribution::from_counts(counts);
    const StoreBackend backend(store, true);
    const Topology topo{g.ranks, g.rank, g.workers, 0};

    Output csv(g.out, out);
    *csv << kEntropySchema << '\n' << "b,f,mean,std,se,n,H_p,lower,upper,violation\n";
    json rows = json::array();
    std::size_t violations = 0;
    for (auto b : a.block_sizes) {
        for (auto f : a.fetch_factors) {
            SamplerConfig cfg;
            cfg.n = store.size();
            cfg.block_size = b;
            cfg.batch_size = a.batch_size;
            cfg.fetch_factor = f;
            cfg.seed = g.seed;
            auto stream = make_rank_stream(backend, cfg, 0, topo);
            EntropyReport r = measure_pipeline_entropy(*stream, column, p.K(), a.minibatches);
            if (b <= a.batch_size) r.bounds = bounds(p, a.batch_size, b, f);
            const std::string flag = !r.bounds ? "na" : (r.within_bounds(3.0) ? "no" : "yes");
            violations += flag == "yes";
            *csv << b << ',' << f << ',' << fmt("%.6f", r.mean) << ',' << fmt("%.6f", r.std) << ','
                 << fmt("%.6f", r.se) << ',' << r.n << ',' << fmt("%.6f", p.entropy_bits()) << ','
                 << (r.bounds ? fmt("%.6f", r.bounds->lower) : "") << ','
                 << (r.bounds ? fmt("%.6f", r.bounds->upper) : "") << ',' << flag << '\n';
            json row{{"b", b}, {"f", f}, {"mean", r.mean}, {"std", r.std}, {"se", r.se}, {"n", r.n}, {"violation", flag}};
            if (r.bounds) {
                row["lower"] = r.bounds->lower;
                row["upper"] = r.bounds->upper;
            }
            rows.push_back(std::move(row));
        }
    }
    if (violations > 0) err << violations << " cell(s) outside the entropy bounds by more than 3 standard errors\n";
    write_json(g, json{{"H_p", p.entropy_bits()}, {"K", p.K()}, {"violations", violations}, {"cells", rows}});
    return 0;
}

int cmd_validate(const Globals& g, const ValidateArgs& a, std::ostream& out, std::ostream& err) {
    ValidateOptions opt;
    opt.seed = g.seed;
    opt.inject_corruption = a.inject_corruption;
    const auto results = run_validation(opt);

    Output csv(g.out, out);
    *csv << kValidateSchema << '\n' << "suite,passed,detail\n";
    bool all = true;
    json rows = json::array();
    for (const auto& r : results) {
        all = all && r.passed;
        *csv << r.suite << ',' << (r.passed ? "yes" : "no") << ",\"" << r.detail << "\"\n";
        if (!r.passed) err << "FAIL " << r.suite << ": " << r.detail << '\n';
        rows.push_back({{"suite", r.suite}, {"passed", r.passed}, {"detail", r.detail}});
    }
    write_json(g, json{{"passed", all}, {"checks", rows}});
    return all ? 0 : 1;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
    const ChunkedStore store = open_store(g);
    const auto all = standard_strategies(a.batch_size);
    std::vector<StrategyRun> chosen;
    for (const auto& name : a.strategies) {
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.name == name; });
        if (it == all.end()) throw std::runtime_error("unknown strategy '" + name + "'");
        chosen.push_back(*it);
    }
    ComparisonSpec spec;
    spec.batch_size = a.batch_size;
    spec.train.adam.learning_rate = a.lr;
    spec.train.epochs = a.epochs;
    spec.train.init_seed = g.seed;
    spec.tasks = a.tasks;
    spec.test_shards = a.test_shards;
    spec.seeds.clear();
    for (std::uint64_t i = 0; i < a.seeds; ++i) spec.seeds.push_back(g.seed + i);

    const auto runs = compare_strategies(store, chosen, spec);
    Output csv(g.out, out);
    *csv << kTrainSchema << '\n' << "strategy,task,seed,macro_f1,wall_time\n";
    for (const auto& r : runs)
        *csv << r.strategy << ',' << r.task << ',' << r.seed << ',' << fmt("%.17g", r.macro_f1) << ','
             << fmt("%.3f", r.wall_time) << '\n';
    json summary = json::array();
    for (const auto& s : summarize_runs(runs))
        summary.push_back({{"strategy", s.strategy}, {"task", s.task}, {"mean", s.mean}, {"std", s.std}, {"runs", s.runs}});
    write_json(g, json{{"learning_rate", a.lr}, {"summary", summary}});
    return 0;
}

template <class T>
CLI::Option* grid_option(CLI::App* app, const std::string& name, std::vector<T>& target, const std::string& help) {
    return app->add_option(name, target, help)->delimiter(',')->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Block-sampling data loader: store generation, benchmarks, entropy studies, training comparisons"};
    app.name("blockfetch");
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--manifest", g.manifest, "Path to a store's manifest.txt");
    app.add_option("--out", g.out, "CSV output file (generate: store directory); default stdout");
    app.add_option("--json", g.json_path, "Also write a JSON summary here");
    app.add_option("--workers", g.workers, "Loader workers per rank")->envname(kEnvWorkers)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--ranks", g.ranks, "World size (simulated ranks)")->envname(kEnvWorldSize)->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--rank", g.rank, "Rank served by this process")->envname(kEnvRank)->capture_default_str();
    app.add_flag("--no-verify", g.no_verify, "Skip checksum verification when opening the store");

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Write a synthetic sharded store");
    generate->add_option("--rows", gen.rows, "Total rows")->check(CLI::PositiveNumber)->capture_default_str();
    generate->add_option("--cols", gen.cols, "Columns per row")->check(CLI::PositiveNumber)->capture_default_str();
    generate->add_option("--shards", gen.shards, "Number of shards (plates)")->check(CLI::PositiveNumber)->capture_default_str();
    generate->add_option("--density", gen.density, "Fraction of non-zero entries")
        ->check(CLI::Validator(
            [](std::string& s) -> std::string {
                try {
                    const double d = std::stod(s);
                    return d > 0.0 && d <= 1.0 ? "" : "must be in (0, 1]";
                } catch (const std::exception&) {
                    return "not a number";
                }
            },
            "(0, 1]"))
        ->capture_default_str();
    generate->add_flag("--tahoe-like", gen.tahoe_like, "Use 14 plate proportions from 4.7% to 10.4% (H = 3.78 bits)");
    generate->add_option("--labels", gen.labels, "Row label scheme")->check(CLI::IsMember({"plate", "clustered"}))->capture_default_str();
    generate->add_option("--classes", gen.classes, "Classes for clustered labels")->capture_default_str();
    generate->add_option("--groups", gen.groups, "Label groups for clustered labels (0 = none)")->capture_default_str();
    generate->add_flag("--signal", gen.signal, "Gaussian class means plus plate offsets instead of uniform values");
    generate->add_option("--class-scale", gen.class_scale)->capture_default_str();
    generate->add_option("--plate-scale", gen.plate_scale)->capture_default_str();
    generate->add_option("--noise", gen.noise)->capture_default_str();
    generate->add_option("--align", gen.align, "Shard sizes are multiples of this many rows")->check(CLI::PositiveNumber)->capture_default_str();

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Throughput over a grid of block sizes and fetch factors");
    grid_option(bench, "--block-sizes", ba.block_sizes, "Block sizes b");
    grid_option(bench, "--fetch-factors", ba.fetch_factors, "Fetch factors f");
    grid_option(bench, "--strategies", ba.strategies, "block_shuffling and/or streaming");
    bench->add_option("--batch-size", ba.batch_size, "Minibatch size m")->check(CLI::PositiveNumber)->capture_default_str();
    bench->add_option("--warmup", ba.warmup, "Warmup seconds per cell")->capture_default_str();
    bench->add_option("--measure", ba.measure, "Measured seconds per cell")->capture_default_str();
    bench->add_flag("--drop-page-cache-hint", ba.drop_page_cache,
                    "Evict the store from the OS page cache before each cell; cached pages otherwise hide I/O cost");

    EntropyArgs ea;
    auto* entropy = app.add_subcommand("entropy", "Minibatch label entropy over a grid, with bounds");
    grid_option(entropy, "--block-sizes", ea.block_sizes, "Block sizes b");
    grid_option(entropy, "--fetch-factors", ea.fetch_factors, "Fetch factors f");
    entropy->add_option("--batch-size", ea.batch_size, "Minibatch size m")->check(CLI::PositiveNumber)->capture_default_str();
    entropy->add_option("--minibatches", ea.minibatches, "Minibatches measured per cell")->check(CLI::PositiveNumber)->capture_default_str();
    entropy->add_option("--label", ea.label, "Label measured")->check(CLI::IsMember({"plate", "label"}))->capture_default_str();

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate", "Run the property suites; exit code 0 iff all pass");
    validate->add_flag("--inject-corruption", va.inject_corruption, "Corrupt the scratch store before checking it");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Compare loaders by training linear classifiers");
    grid_option(train, "--strategies", ta.strategies, "Subset of streaming,streaming_buffered,block_shuffling,random");
    grid_option(train, "--tasks", ta.tasks, "fine and/or broad");
    train->add_option("--seeds", ta.seeds, "Repeats, with seeds seed..seed+n-1")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--lr", ta.lr, "Adam learning rate shared by all strategies")->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--epochs", ta.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--batch-size", ta.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    train->add_option("--test-shards", ta.test_shards, "Trailing shards held out for evaluation")->check(CLI::PositiveNumber)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*generate) return cmd_generate(g, gen, out);
        if (*bench) return cmd_bench(g, ba, out, err);
        if (*entropy) return cmd_entropy(g, ea, out, err);
        if (*validate) return cmd_validate(g, va, out, err);
        if (*train) return cmd_train(g, ta, out);
    } catch (const StoreError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"blockfetch"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace blockfetch::cli
