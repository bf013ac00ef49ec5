#ifndef BLOCKFETCH_THEORY_HPP
#define BLOCKFETCH_THEORY_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blockfetch/pipeline.hpp"

namespace blockfetch {

/// Categorical distribution over K labels. Entries are non-negative and sum
/// to 1 within 1e-12.
class LabelDistribution {
public:
    explicit LabelDistribution(std::vector<double> p);

    /// Normalizes non-negative counts or weights.
    static LabelDistribution from_counts(std::span<const double> counts);

    std::size_t K() const noexcept { return p_.size(); }
    const std::vector<double>& p() const noexcept { return p_; }
    double entropy_bits() const;

private:
    std::vector<double> p_;
};

/// 14 plate proportions between 4.7% and 10.4% with entropy 3.78 bits.
const LabelDistribution& tahoe_like();

/// -sum (c/m) log2 (c/m). Throws std::invalid_argument if the counts do not
/// sum to m or m is 0.
double entropy_bits(std::span<const std::uint64_t> counts, std::uint64_t m);

struct EntropyBounds {
    double H_p = 0;
    double lower = 0;
    double upper = 0;
    std::uint64_t m = 0;
    std::uint64_t b = 0;
    std::uint64_t f = 0;
    std::size_t K = 0;
};

/// Envelope on the expected minibatch entropy for block size b <= m.
EntropyBounds bounds(const LabelDistribution& p, std::uint64_t m, std::uint64_t b, std::uint64_t f = 1);

struct EntropyReport {
    double mean = 0;
    double std = 0;  ///< sample standard deviation
    double se = 0;   ///< std / sqrt(n)
    std::uint64_t n = 0;
    std::optional<EntropyBounds> bounds;

    bool within_bounds(double se_multiple = 3.0) const;
};

/// Mean and sample deviation of a list of entropies.
EntropyReport summarize(std::span<const double> entropies);

/**
 * Monte Carlo under the plate-constant model: ceil(f*m/b) block labels drawn
 * IID from p, each expanded to b cells, and m of the cells chosen uniformly
 * without replacement. Trials are split over fixed seed shards and merged in
 * shard order, so the result does not depend on `threads`.
 */
EntropyReport simulate(const LabelDistribution& p, std::uint64_t m, std::uint64_t b, std::uint64_t f,
                       std::uint64_t n_minibatches = 10'000, std::uint64_t seed = 0, unsigned threads = 0);

/**
 * Entropy of the label column `label_column` in the first n_minibatches
 * full-size minibatches of `stream`. `label_count` is K. Throws
 * std::invalid_argument if the column is missing or not a label column.
 */
EntropyReport measure_pipeline_entropy(MinibatchSource& stream, std::string_view label_column, std::size_t label_count,
                                       std::uint64_t n_minibatches);

}  // namespace blockfetch

#endif  // BLOCKFETCH_THEORY_HPP
