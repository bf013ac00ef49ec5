#include <doctest.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "blockfetch/pipeline.hpp"
#include "blockfetch/store.hpp"
#include "support.hpp"

using namespace blockfetch;
using testing::sentinel_payload;

namespace {

SamplerConfig make(std::uint64_t n, std::uint64_t b, std::uint64_t m, std::uint64_t f, std::uint64_t seed = 0,
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

std::vector<Minibatch> drain(MinibatchSource& s) {
    std::vector<Minibatch> out;
    while (auto mb = s.next()) out.push_back(std::move(*mb));
    return out;
}

void check_aligned(const Minibatch& mb) {
    REQUIRE(mb.payload.get<IndexColumn>("id") == mb.source_indices);
}

}  // namespace

TEST_CASE("four rows with b=1, m=2, f=2 make one fetch of two minibatches") {
    const InMemoryBackend backend(sentinel_payload(4));
    auto stream = make_stream(backend, make(4, 1, 2, 2, 3));
    const auto batches = drain(*stream);
    REQUIRE(batches.size() == 2);
    std::set<RowIndex> seen;
    for (const auto& mb : batches) {
        CHECK(mb.size() == 2);
        CHECK(mb.fetch_position == 0);
        check_aligned(mb);
        seen.insert(mb.source_indices.begin(), mb.source_indices.end());
    }
    CHECK(seen == std::set<RowIndex>{0, 1, 2, 3});
    CHECK(backend.calls() == 1);
}

TEST_CASE("each minibatch of a b=16, f=10 fetch draws from at most 40 blocks") {
    const InMemoryBackend backend(sentinel_payload(64 * 10 * 8));
    const auto cfg = make(64 * 10 * 8, 16, 64, 10, 1);
    auto stream = make_stream(backend, cfg);
    std::size_t many = 0;
    for (const auto& mb : drain(*stream)) {
        std::set<RowIndex> blocks;
        for (auto i : mb.source_indices) blocks.insert(i / 16);
        CHECK(blocks.size() <= 40);
        many += blocks.size() > 20;
    }
    CHECK(many > 0);
    CHECK(backend.calls() == 8);
    // 40 non-adjacent blocks per fetch at most.
    CHECK(backend.range_reads() <= 8 * 40);
}

TEST_CASE("fetch economy: one backend call per m*f rows") {
    for (auto [n, b, m, f] : std::vector<std::array<std::uint64_t, 4>>{
             {1000, 7, 10, 3}, {640, 16, 64, 10}, {5, 1, 2, 2}, {1, 1, 1, 1}, {999, 1000, 8, 2}}) {
        const InMemoryBackend backend(sentinel_payload(n));
        auto stream = make_stream(backend, make(n, b, m, f, n));
        const auto batches = drain(*stream);
        CHECK(backend.calls() == fetch_count(n, m * f));
        std::uint64_t rows = 0;
        for (const auto& mb : batches) rows += mb.size();
        CHECK(rows == n);
    }
}

TEST_CASE("the minibatches of a fetch are a permutation of its indices") {
    const auto cfg = make(500, 5, 8, 4, 17);
    const auto plan = build_plan(cfg, 0);
    const InMemoryBackend backend(sentinel_payload(500));
    FetchLoader loader(plan, backend, cfg);
    std::map<std::uint64_t, std::vector<RowIndex>> by_fetch;
    std::vector<std::uint64_t> sizes;
    while (auto mb = loader.next()) {
        check_aligned(*mb);
        auto& v = by_fetch[mb->fetch_position];
        v.insert(v.end(), mb->source_indices.begin(), mb->source_indices.end());
        sizes.push_back(mb->size());
    }
    REQUIRE(by_fetch.size() == plan.fetch_batches.size());
    bool any_reordered = false;
    for (const auto& fs : plan.fetch_batches) {
        auto got = by_fetch[fs.position];
        any_reordered = any_reordered || got != fs.indices;
        auto want = fs.indices;
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }
    CHECK(any_reordered);
    // Only the last minibatch of the epoch may be short: 500 = 15*32 + 20.
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) CHECK(sizes[i] == 8);
    CHECK(sizes.back() == 4);
    CHECK(loader.fetches_done() == plan.fetch_batches.size());
}

TEST_CASE("streaming keeps on-disk order inside each fetch") {
    const InMemoryBackend backend(sentinel_payload(100));
    auto stream = make_stream(backend, make(100, 1, 10, 4, 9, Streaming{}));
    RowIndex expect = 0;
    for (const auto& mb : drain(*stream))
        for (auto i : mb.source_indices) CHECK(i == expect++);
    CHECK(expect == 100);
}

TEST_CASE("a fixed plan and seed give identical streams") {
    const InMemoryBackend backend(sentinel_payload(3000));
    const auto cfg = make(3000, 4, 16, 8, 2024);
    auto collect = [&] {
        std::vector<std::pair<std::vector<RowIndex>, std::uint64_t>> out;
        auto s = make_stream(backend, cfg, 2);
        while (auto mb = s->next()) out.emplace_back(mb->source_indices, mb->fetch_position);
        return out;
    };
    CHECK(collect() == collect());
    auto other = cfg;
    other.seed = 2025;
    auto s = make_stream(backend, other, 2);
    CHECK(s->next()->source_indices != collect().front().first);
}

TEST_CASE("a worker given one fetch reproduces that fetch exactly") {
    const auto cfg = make(2000, 8, 16, 4, 5);
    auto plan = std::make_shared<const IndexPlan>(build_plan(cfg, 1));
    const InMemoryBackend backend(sentinel_payload(2000));
    FetchLoader all(*plan, backend, cfg);
    std::vector<std::vector<RowIndex>> fetch3;
    while (auto mb = all.next())
        if (mb->fetch_position == 3) fetch3.push_back(mb->source_indices);
    FetchLoader one(plan, {3}, backend, cfg);
    const auto got = one.next_fetch();
    REQUIRE(got);
    REQUIRE(got->size() == fetch3.size());
    for (std::size_t i = 0; i < fetch3.size(); ++i) CHECK((*got)[i].source_indices == fetch3[i]);
    CHECK_FALSE(one.next_fetch());
    CHECK_THROWS_AS(FetchLoader(plan, {999}, backend, cfg), ConfigError);
}

TEST_CASE("labels stay aligned with rows on a real store") {
    testing::TempDir dir("align");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 3000;
    spec.n_cols = 12;
    spec.shards = 6;
    spec.density = 0.5;
    spec.seed = 4;
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const RowRange all{0, 3000};
    const auto truth = store.read_rows(std::span(&all, 1));
    const StoreBackend backend(store);
    auto stream = make_stream(backend, make(3000, 16, 32, 4, 8));
    std::uint64_t rows = 0;
    for (const auto& mb : drain(*stream)) {
        const auto& x = mb.payload.get<SparseRows>(kRowsColumn);
        const auto& plate = mb.payload.get<LabelColumn>(kPlateColumn);
        std::vector<std::size_t> pos(mb.source_indices.begin(), mb.source_indices.end());
        CHECK(x == truth.rows.take(pos));
        for (std::size_t i = 0; i < pos.size(); ++i) CHECK(plate[i] == truth.plates[pos[i]]);
        rows += mb.size();
    }
    CHECK(rows == 3000);
}

TEST_CASE("range reads per fetch equal the number of non-adjacent blocks") {
    testing::TempDir dir("io");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 64 * 64;
    spec.n_cols = 4;
    spec.density = 1.0;
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const StoreBackend backend(store, true);

    // b=16, m=64: blocks 0, 2, 4, 6 are never adjacent, so 4 reads.
    SamplerConfig cfg = make(4096, 16, 64, 1);
    IndexPlan plan;
    plan.total_indices = 64;
    FetchIndexSet fs;
    for (std::uint64_t blk : {6, 0, 4, 2})
        for (std::uint64_t i = 0; i < 16; ++i) fs.indices.push_back(blk * 16 + i);
    plan.fetch_batches.push_back(fs);
    FetchLoader loader(plan, backend, cfg);
    const auto before = store.io_counters();
    REQUIRE(loader.next_fetch());
    CHECK((store.io_counters() - before).range_reads == 4);

    // b=1: 64 scattered rows need 64 reads.
    IndexPlan scattered;
    FetchIndexSet sf;
    for (std::uint64_t i = 0; i < 64; ++i) sf.indices.push_back(i * 3);
    scattered.fetch_batches.push_back(sf);
    FetchLoader per_row(scattered, backend, make(4096, 1, 64, 1));
    const auto mark = store.io_counters();
    REQUIRE(per_row.next_fetch());
    CHECK((store.io_counters() - mark).range_reads == 64);
}

TEST_CASE("sparse-to-dense runs once per fetch") {
    testing::TempDir dir("dense");
    SynthSpec spec;
    spec.directory = dir.path();
    spec.n_rows = 2000;
    spec.n_cols = 10;
    spec.density = 0.3;
    spec.shards = 2;
    generate_synthetic(spec);
    const auto store = ChunkedStore::open(dir / kManifestFileName);
    const StoreBackend backend(store);
    const auto cfg = make(2000, 16, 64, 10, 3);

    std::atomic<int> fetch_calls{0}, batch_calls{0};
    CallbackSet cb;
    auto dense = densify();
    cb.fetch_transform = [&](MultiPayload p) {
        ++fetch_calls;
        return dense(std::move(p));
    };
    cb.batch_transform = [&](MultiPayload p) {
        ++batch_calls;
        return p;
    };
    auto stream = make_stream(backend, cfg, 0, cb);
    const RowRange all{0, 2000};
    const auto truth = to_dense(store.read_rows(std::span(&all, 1)).rows);
    std::size_t batches = 0;
    for (const auto& mb : drain(*stream)) {
        ++batches;
        const auto& x = mb.payload.get<DenseRows>(kRowsColumn);
        CHECK(x.n_cols == 10);
        std::vector<std::size_t> pos(mb.source_indices.begin(), mb.source_indices.end());
        CHECK(x == truth.take(pos));
    }
    CHECK(fetch_calls == static_cast<int>(fetch_count(2000, 640)));
    CHECK(batch_calls == static_cast<int>(batches));
    CHECK(batches == 32);  // 3 full fetches of 10 minibatches + 80 rows -> 2
}

TEST_CASE("custom fetch and batch callbacks are used") {
    const InMemoryBackend backend(sentinel_payload(40));
    CallbackSet cb;
    std::atomic<int> fetches{0};
    cb.fetch_callback = [&](const Backend& b, std::span<const RowIndex> idx) {
        ++fetches;
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        return default_fetch(b, idx);
    };
    cb.batch_callback = [](const MultiPayload& p, std::span<const std::size_t> pos) {
        std::vector<std::size_t> rev(pos.rbegin(), pos.rend());
        return p.take(rev);
    };
    auto stream = make_stream(backend, make(40, 4, 5, 2, 1), 0, cb);
    for (const auto& mb : drain(*stream)) {
        auto ids = mb.payload.get<IndexColumn>("id");
        std::reverse(ids.begin(), ids.end());
        CHECK(ids == mb.source_indices);
    }
    CHECK(fetches == 4);
}

TEST_CASE("hook failures name the hook and the fetch") {
    const InMemoryBackend backend(sentinel_payload(40));
    CallbackSet cb;
    cb.fetch_transform = [](MultiPayload p) {
        if (p.get<IndexColumn>("id").size() < 10) throw std::runtime_error("boom");
        return p;
    };
    // m*f = 16: fetches 0 and 1 are full, fetch 2 has 8 rows.
    auto stream = make_stream(backend, make(40, 40, 4, 4, 1, Streaming{}), 0, cb);
    int seen = 0;
    try {
        while (stream->next()) ++seen;
        FAIL("expected an error");
    } catch (const PipelineError& e) {
        CHECK(e.hook() == "fetch_transform");
        CHECK(e.fetch_position() == 2);
        CHECK(std::string(e.what()).find("boom") != std::string::npos);
    }
    CHECK(seen == 8);

    CallbackSet shrink;
    shrink.fetch_transform = [](MultiPayload p) { return p.take(std::vector<std::size_t>{0}); };
    auto bad = make_stream(backend, make(40, 4, 4, 4, 1), 0, shrink);
    CHECK_THROWS_AS(bad->next(), PipelineError);

    CallbackSet batch_fail;
    batch_fail.batch_transform = [](MultiPayload) -> MultiPayload { throw std::runtime_error("nope"); };
    auto third = make_stream(backend, make(40, 4, 4, 4, 1), 0, batch_fail);
    CHECK_THROWS_WITH_AS(third->next(), doctest::Contains("batch_transform"), PipelineError);
}

TEST_CASE("backend failures propagate with the fetch position") {
    const InMemoryBackend backend(sentinel_payload(10));
    auto stream = make_stream(backend, make(20, 5, 5, 1, 0, Streaming{}));
    int ok = 0;
    try {
        while (stream->next()) ++ok;
        FAIL("expected an error");
    } catch (const PipelineError& e) {
        CHECK(e.hook() == "fetch_callback");
        CHECK(e.fetch_position() == 2);
    }
    CHECK(ok == 2);
}

TEST_CASE("buffered stream emits every row exactly once") {
    for (std::uint64_t buffer : {3ULL, 16ULL, 100ULL, 1000ULL}) {
        const InMemoryBackend backend(sentinel_payload(777));
        auto stream = make_stream(backend, make(777, 1, 3, 5, buffer, StreamingBuffered{buffer}));
        std::vector<RowIndex> all;
        const auto batches = drain(*stream);
        for (std::size_t i = 0; i < batches.size(); ++i) {
            check_aligned(batches[i]);
            if (i + 1 < batches.size()) CHECK(batches[i].size() == 3);
            CHECK(batches[i].fetch_position == i);
            all.insert(all.end(), batches[i].source_indices.begin(), batches[i].source_indices.end());
        }
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == 777);
        for (std::size_t i = 0; i < 777; ++i) REQUIRE(all[i] == i);
    }
}

TEST_CASE("a buffer of m rows emits consecutive chunks in shuffled order") {
    const std::uint64_t m = 8;
    const InMemoryBackend backend(sentinel_payload(200));
    auto stream = make_stream(backend, make(200, 1, m, 3, 6, StreamingBuffered{m}));
    std::uint64_t start = 0;
    bool shuffled = false;
    for (const auto& mb : drain(*stream)) {
        auto got = mb.source_indices;
        std::vector<RowIndex> want;
        for (std::uint64_t i = start; i < std::min<std::uint64_t>(200, start + m); ++i) want.push_back(i);
        shuffled = shuffled || got != want;
        std::sort(got.begin(), got.end());
        CHECK(got == want);
        start += m;
    }
    CHECK(start >= 200);
    CHECK(shuffled);
}

TEST_CASE("a buffer holding the whole dataset draws the first minibatch uniformly") {
    // Every row is in the first minibatch with probability m / n = 0.2.
    const std::uint64_t n = 10;
    std::vector<int> hits(n, 0);
    const int trials = 5000;
    const InMemoryBackend backend(sentinel_payload(n));
    for (int s = 0; s < trials; ++s) {
        auto stream = make_stream(backend, make(n, 1, 2, 1, s, StreamingBuffered{n}));
        const auto mb = stream->next();
        for (auto i : mb->source_indices) ++hits[i];
    }
    for (int c : hits) CHECK(std::abs(c - trials / 5) < 150);
}

TEST_CASE("buffered streaming over plate-sorted data stays low-entropy") {
    // 14 plates of 20,000 rows; a 1,024-row buffer sees mostly one plate.
    const std::uint64_t plate = 20'000, n = 14 * plate;
    const InMemoryBackend backend(sentinel_payload(n, plate, 14));
    auto stream = make_stream(backend, make(n, 1, 64, 4, 1, StreamingBuffered{1024}));
    std::size_t single = 0, total = 0;
    double entropy = 0;
    while (auto mb = stream->next()) {
        std::map<std::uint32_t, double> counts;
        for (auto l : mb->payload.get<LabelColumn>("label")) counts[l] += 1;
        for (const auto& [l, c] : counts) entropy -= c / mb->size() * std::log2(c / mb->size());
        single += counts.size() == 1;
        ++total;
    }
    CHECK(single > total * 3 / 4);
    CHECK(entropy / total < 0.25);
}
