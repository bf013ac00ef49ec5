#ifndef BLOCKFETCH_SAMPLING_HPP
#define BLOCKFETCH_SAMPLING_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace blockfetch {

using RowIndex = std::uint64_t;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

/// Sequential, unshuffled order.
struct Streaming {};

/// Sequential order fed through a shuffle buffer of `buffer_rows` rows.
struct StreamingBuffered {
    std::size_t buffer_rows = 0;
};

/// Contiguous blocks of b rows visited in a random order.
struct BlockShuffling {};

/**
 * Blocks drawn without replacement with probability proportional to the sum
 * of their rows' weights. Drawing stops once `rows_per_epoch` rows have been
 * collected (default: every block with positive weight). Zero-weight blocks
 * are never drawn.
 */
struct BlockWeighted {
    std::vector<double> weights;
    std::optional<std::uint64_t> rows_per_epoch;
};

/// BlockWeighted over inverse class frequencies of `labels`.
struct ClassBalanced {
    std::vector<std::uint32_t> labels;
    std::optional<std::uint64_t> rows_per_epoch;
};

using Strategy = std::variant<Streaming, StreamingBuffered, BlockShuffling, BlockWeighted, ClassBalanced>;

std::string strategy_name(const Strategy& strategy);

/// Whether fetched rows are permuted in memory before being split into
/// minibatches. Streaming keeps on-disk order.
bool shuffles_fetches(const Strategy& strategy) noexcept;

struct SamplerConfig {
    std::uint64_t n = 0;           ///< dataset rows
    std::uint64_t block_size = 1;  ///< b
    std::uint64_t batch_size = 1;  ///< m
    std::uint64_t fetch_factor = 1;  ///< f
    std::uint64_t seed = 0;
    Strategy strategy = BlockShuffling{};

    std::uint64_t fetch_rows() const noexcept { return batch_size * fetch_factor; }
};

/// Throws ConfigError naming the first violated invariant.
void validate(const SamplerConfig& cfg);

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

struct FetchIndexSet {
    std::uint64_t position = 0;
    std::vector<RowIndex> indices;

    bool operator==(const FetchIndexSet&) const = default;
};

struct IndexPlan {
    std::uint64_t epoch = 0;
    std::vector<FetchIndexSet> fetch_batches;
    std::uint64_t total_indices = 0;

    /// All indices in plan order.
    std::vector<RowIndex> flatten() const;

    /// Little-endian byte image (epoch, totals, every fetch set). Used to
    /// compare plans built independently, e.g. on different ranks.
    std::vector<std::uint8_t> serialize() const;

    bool operator==(const IndexPlan&) const = default;
};

/// Epoch order of row indices before splitting into fetch sets.
std::vector<RowIndex> epoch_order(const SamplerConfig& cfg, std::uint64_t epoch);

/// Deterministic plan for (cfg, epoch). The same inputs give the same plan
/// on every platform.
IndexPlan build_plan(const SamplerConfig& cfg, std::uint64_t epoch);

/// ceil(m*f / b): block reads needed per fetch.
std::uint64_t blocks_per_fetch(const SamplerConfig& cfg) noexcept;

/// Inverse class frequency per row: weight(row) = 1 / count(label(row)).
std::vector<double> class_weights(std::span<const std::uint32_t> labels);

/// Number of fetch sets an epoch of `rows` rows splits into.
constexpr std::uint64_t fetch_count(std::uint64_t rows, std::uint64_t fetch_rows) noexcept {
    return fetch_rows == 0 ? 0 : (rows + fetch_rows - 1) / fetch_rows;
}

}  // namespace blockfetch

#endif  // BLOCKFETCH_SAMPLING_HPP
