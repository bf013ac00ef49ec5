#include "blockfetch/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <unordered_set>

#include "blockfetch/rng.hpp"

namespace blockfetch {

LabelDistribution::LabelDistribution(std::vector<double> p) : p_(std::move(p)) {
    if (p_.empty()) throw std::invalid_argument("label distribution needs K >= 1");
    double sum = 0;
    for (double x : p_) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("label probabilities must be finite and >= 0");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("label probabilities must sum to 1");
}

LabelDistribution LabelDistribution::from_counts(std::span<const double> counts) {
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (!(total > 0.0)) throw std::invalid_argument("counts must have a positive total");
    std::vector<double> p(counts.begin(), counts.end());
    for (double& x : p) x /= total;
    // Put the rounding residue on the largest entry.
    const double residue = 1.0 - std::accumulate(p.begin(), p.end(), 0.0);
    *std::max_element(p.begin(), p.end()) += residue;
    return LabelDistribution(std::move(p));
}

double LabelDistribution::entropy_bits() const {
    double h = 0;
    for (double x : p_)
        if (x > 0) h -= x * std::log2(x);
    return h;
}

const LabelDistribution& tahoe_like() {
    static const LabelDistribution dist({0.0470, 0.0525, 0.0579, 0.0620, 0.0654, 0.0683, 0.0710, 0.0734, 0.0757,
                                         0.0778, 0.0798, 0.0817, 0.0835, 0.1040});
    return dist;
}

double entropy_bits(std::span<const std::uint64_t> counts, std::uint64_t m) {
    if (m == 0) throw std::invalid_argument("minibatch size must be >= 1");
    const std::uint64_t total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    if (total != m)
        throw std::invalid_argument("label counts sum to " + std::to_string(total) + ", expected " + std::to_string(m));
    double h = 0;
    const double md = static_cast<double>(m);
    for (auto c : counts) {
        if (c == 0) continue;
        const double q = static_cast<double>(c) / md;
        h -= q * std::log2(q);
    }
    return h;
}

EntropyBounds bounds(const LabelDistribution& p, std::uint64_t m, std::uint64_t b, std::uint64_t f) {
    if (m == 0 || b == 0) throw std::invalid_argument("m and b must be >= 1");
    if (b > m) throw std::invalid_argument("bounds require b <= m (got b=" + std::to_string(b) + ", m=" + std::to_string(m) + ")");
    EntropyBounds out;
    out.H_p = p.entropy_bits();
    out.m = m;
    out.b = b;
    out.f = f;
    out.K = p.K();
    const double k1 = static_cast<double>(p.K() - 1);
    const double denom = 2.0 * static_cast<double>(m) * std::numbers::ln2;
    out.upper = out.H_p - k1 / denom;
    out.lower = out.H_p - k1 * static_cast<double>(b) / denom;
    return out;
}

bool EntropyReport::within_bounds(double se_multiple) const {
    if (!bounds) return true;
    return mean >= bounds->lower - se_multiple * se && mean <= bounds->upper + se_multiple * se;
}

EntropyReport summarize(std::span<const double> entropies) {
    EntropyReport r;
    r.n = entropies.size();
    if (r.n == 0) return r;
    r.mean = std::accumulate(entropies.begin(), entropies.end(), 0.0) / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0;
        for (double h : entropies) ss += (h - r.mean) * (h - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(r.n - 1));
        r.se = r.std / std::sqrt(static_cast<double>(r.n));
    }
    return r;
}

namespace {

constexpr std::uint64_t kSimShards = 16;

struct BlockModel {
    std::uint64_t m, b, cells;
    std::vector<double> cdf;

    std::size_t draw_label(Xoshiro256& rng) const {
        const double u = rng.uniform();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    }

    double trial(Xoshiro256& rng, std::unordered_set<std::uint64_t>& chosen, std::vector<std::uint64_t>& cells_out,
                 std::vector<std::uint64_t>& counts) const {
        // Floyd: m distinct cells out of `cells`.
        chosen.clear();
        for (std::uint64_t j = cells - m; j < cells; ++j) {
            const std::uint64_t t = rng.below(j + 1);
            chosen.insert(chosen.contains(t) ? j : t);
        }
        cells_out.assign(chosen.begin(), chosen.end());
        std::sort(cells_out.begin(), cells_out.end());

        // Only blocks that contribute a cell need a label.
        std::fill(counts.begin(), counts.end(), 0);
        std::uint64_t block = ~std::uint64_t{0};
        std::size_t label = 0;
        for (auto c : cells_out) {
            if (c / b != block) {
                block = c / b;
                label = draw_label(rng);
            }
            ++counts[label];
        }
        return entropy_bits(counts, m);
    }
};

}  // namespace

EntropyReport simulate(const LabelDistribution& p, std::uint64_t m, std::uint64_t b, std::uint64_t f,
                       std::uint64_t n_minibatches, std::uint64_t seed, unsigned threads) {
    if (m == 0 || b == 0 || f == 0) throw std::invalid_argument("m, b, f must be >= 1");
    BlockModel model;
    model.m = m;
    model.b = b;
    model.cells = ((f * m + b - 1) / b) * b;
    model.cdf.resize(p.K());
    std::partial_sum(p.p().begin(), p.p().end(), model.cdf.begin());

    std::vector<double> entropies(n_minibatches);
    auto run_shard = [&](std::uint64_t s) {
        const std::uint64_t lo = n_minibatches * s / kSimShards;
        const std::uint64_t hi = n_minibatches * (s + 1) / kSimShards;
        Xoshiro256 rng(derive_seed(seed, "simulate", s));
        std::unordered_set<std::uint64_t> chosen;
        chosen.reserve(2 * m);
        std::vector<std::uint64_t> cells;
        std::vector<std::uint64_t> counts(p.K());
        for (std::uint64_t i = lo; i < hi; ++i) entropies[i] = model.trial(rng, chosen, cells, counts);
    };

    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, kSimShards));
    if (threads <= 1) {
        for (std::uint64_t s = 0; s < kSimShards; ++s) run_shard(s);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::uint64_t s = t; s < kSimShards; s += threads) run_shard(s);
            });
        for (auto& th : pool) th.join();
    }

    EntropyReport report = summarize(entropies);
    if (b <= m) report.bounds = bounds(p, m, b, f);
    return report;
}

EntropyReport measure_pipeline_entropy(MinibatchSource& stream, std::string_view label_column, std::size_t label_count,
                                       std::uint64_t n_minibatches) {
    if (label_count == 0) throw std::invalid_argument("label_count must be >= 1");
    std::vector<double> entropies;
    std::vector<std::uint64_t> counts(label_count);
    std::size_t full = 0;
    while (entropies.size() < n_minibatches) {
        auto batch = stream.next();
        if (!batch) break;
        if (!batch->payload.contains(label_column))
            throw std::invalid_argument("minibatch has no label column '" + std::string(label_column) + "'");
        const auto* labels = std::get_if<LabelColumn>(&batch->payload.at(label_column));
        if (labels == nullptr) throw std::invalid_argument("column '" + std::string(label_column) + "' is not a label column");
        if (full == 0) full = labels->size();
        if (labels->size() < full) continue;
        std::fill(counts.begin(), counts.end(), 0);
        for (auto l : *labels) {
            if (l >= label_count) throw std::invalid_argument("label " + std::to_string(l) + " out of range");
            ++counts[l];
        }
        entropies.push_back(entropy_bits(counts, labels->size()));
    }
    if (entropies.empty()) throw std::invalid_argument("stream produced no minibatches");
    return summarize(entropies);
}

}  // namespace blockfetch
