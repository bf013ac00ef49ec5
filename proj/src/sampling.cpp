#include "blockfetch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "blockfetch/rng.hpp"

namespace blockfetch {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void require(bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
}

void validate_weights(std::span<const double> weights, std::uint64_t n) {
    require(weights.size() == n, "weights must have length n");
    bool any_positive = false;
    for (double w : weights) {
        require(std::isfinite(w) && w >= 0.0, "weights must be finite and >= 0");
        any_positive = any_positive || w > 0.0;
    }
    require(any_positive, "weights must contain at least one entry > 0");
}

std::uint64_t block_count(std::uint64_t n, std::uint64_t b) { return (n + b - 1) / b; }

// Weighted sampling of blocks without replacement, sequential semantics.
// Uses Efraimidis-Spirakis keys log(u)/w: sorting keys descending gives the
// same distribution as drawing one block at a time proportional to weight.
std::vector<RowIndex> weighted_block_order(const SamplerConfig& cfg, std::span<const double> row_weights,
                                           std::optional<std::uint64_t> rows_per_epoch,
                                           std::uint64_t epoch) {
    const std::uint64_t n = cfg.n;
    const std::uint64_t b = cfg.block_size;
    const std::uint64_t k = block_count(n, b);

    struct Keyed {
        double key;
        std::uint64_t block;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(k);
    Xoshiro256 rng(derive_seed(epoch_seed(cfg.seed, epoch), "block-weighted", 0));
    for (std::uint64_t blk = 0; blk < k; ++blk) {
        const std::uint64_t lo = blk * b;
        const std::uint64_t hi = std::min(n, lo + b);
        double w = 0.0;
        for (std::uint64_t i = lo; i < hi; ++i) w += row_weights[i];
        const double u = rng.uniform_open0();  // drawn for every block to keep streams aligned
        if (w > 0.0) keyed.push_back({std::log(u) / w, blk});
    }
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const Keyed& a, const Keyed& c) { return a.key > c.key; });

    const std::uint64_t target = rows_per_epoch.value_or(n);
    std::vector<RowIndex> order;
    order.reserve(std::min<std::uint64_t>(target + b, n));
    for (const auto& kb : keyed) {
        if (order.size() >= target) break;
        const std::uint64_t lo = kb.block * b;
        const std::uint64_t hi = std::min(n, lo + b);
        for (std::uint64_t i = lo; i < hi; ++i) order.push_back(i);
    }
    return order;
}

}  // namespace

std::string strategy_name(const Strategy& strategy) {
    return std::visit(overloaded{
                          [](const Streaming&) { return std::string("streaming"); },
                          [](const StreamingBuffered&) { return std::string("streaming_buffered"); },
                          [](const BlockShuffling&) { return std::string("block_shuffling"); },
                          [](const BlockWeighted&) { return std::string("block_weighted"); },
                          [](const ClassBalanced&) { return std::string("class_balanced"); },
                      },
                      strategy);
}

bool shuffles_fetches(const Strategy& strategy) noexcept {
    return !std::holds_alternative<Streaming>(strategy) && !std::holds_alternative<StreamingBuffered>(strategy);
}

void validate(const SamplerConfig& cfg) {
    require(cfg.n >= 1, "n must be >= 1");
    require(cfg.block_size >= 1, "block_size (b) must be >= 1");
    require(cfg.batch_size >= 1, "batch_size (m) must be >= 1");
    require(cfg.fetch_factor >= 1, "fetch_factor (f) must be >= 1");
    std::visit(overloaded{
                   [](const Streaming&) {},
                   [&](const StreamingBuffered& s) {
                       require(s.buffer_rows >= cfg.batch_size, "buffer_rows must be >= batch_size (m)");
                   },
                   [](const BlockShuffling&) {},
                   [&](const BlockWeighted& s) { validate_weights(s.weights, cfg.n); },
                   [&](const ClassBalanced& s) {
                       require(s.labels.size() == cfg.n, "labels must have length n");
                   },
               },
               cfg.strategy);
}

std::vector<RowIndex> epoch_order(const SamplerConfig& cfg, std::uint64_t epoch) {
    validate(cfg);
    const std::uint64_t n = cfg.n;
    const std::uint64_t b = cfg.block_size;

    auto identity = [n] {
        std::vector<RowIndex> order(n);
        std::iota(order.begin(), order.end(), RowIndex{0});
        return order;
    };

    return std::visit(
        overloaded{
            [&](const Streaming&) { return identity(); },
            [&](const StreamingBuffered&) { return identity(); },
            [&](const BlockShuffling&) {
                const std::uint64_t k = block_count(n, b);
                std::vector<std::uint64_t> blocks(k);
                std::iota(blocks.begin(), blocks.end(), std::uint64_t{0});
                Xoshiro256 rng(derive_seed(epoch_seed(cfg.seed, epoch), "block-order", 0));
                shuffle(std::span<std::uint64_t>(blocks), rng);
                std::vector<RowIndex> order;
                order.reserve(n);
                for (std::uint64_t blk : blocks) {
                    const std::uint64_t hi = std::min(n, blk * b + b);
                    for (std::uint64_t i = blk * b; i < hi; ++i) order.push_back(i);
                }
                return order;
            },
            [&](const BlockWeighted& s) { return weighted_block_order(cfg, s.weights, s.rows_per_epoch, epoch); },
            [&](const ClassBalanced& s) {
                const auto w = class_weights(s.labels);
                return weighted_block_order(cfg, w, s.rows_per_epoch, epoch);
            },
        },
        cfg.strategy);
}

IndexPlan build_plan(const SamplerConfig& cfg, std::uint64_t epoch) {
    auto order = epoch_order(cfg, epoch);
    const std::uint64_t chunk = cfg.fetch_rows();

    IndexPlan plan;
    plan.epoch = epoch;
    plan.total_indices = order.size();
    plan.fetch_batches.reserve(fetch_count(order.size(), chunk));
    for (std::uint64_t start = 0, pos = 0; start < order.size(); start += chunk, ++pos) {
        const auto end = std::min<std::uint64_t>(order.size(), start + chunk);
        plan.fetch_batches.push_back(
            {pos, std::vector<RowIndex>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end))});
    }
    return plan;
}

std::uint64_t blocks_per_fetch(const SamplerConfig& cfg) noexcept {
    const std::uint64_t rows = cfg.fetch_rows();
    return (rows + cfg.block_size - 1) / cfg.block_size;
}

std::vector<double> class_weights(std::span<const std::uint32_t> labels) {
    if (labels.empty()) throw ConfigError("class_weights: label list is empty");
    std::unordered_map<std::uint32_t, std::uint64_t> counts;
    for (auto c : labels) ++counts[c];
    std::vector<double> weights;
    weights.reserve(labels.size());
    for (auto c : labels) weights.push_back(1.0 / static_cast<double>(counts[c]));
    return weights;
}

std::vector<RowIndex> IndexPlan::flatten() const {
    std::vector<RowIndex> all;
    all.reserve(total_indices);
    for (const auto& fs : fetch_batches) all.insert(all.end(), fs.indices.begin(), fs.indices.end());
    return all;
}

std::vector<std::uint8_t> IndexPlan::serialize() const {
    std::vector<std::uint8_t> out;
    auto put = [&out](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put(epoch);
    put(total_indices);
    put(fetch_batches.size());
    for (const auto& fs : fetch_batches) {
        put(fs.position);
        put(fs.indices.size());
        for (auto i : fs.indices) put(i);
    }
    return out;
}

}  // namespace blockfetch
