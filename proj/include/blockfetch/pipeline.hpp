#ifndef BLOCKFETCH_PIPELINE_HPP
#define BLOCKFETCH_PIPELINE_HPP

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockfetch/payload.hpp"
#include "blockfetch/rng.hpp"
#include "blockfetch/sampling.hpp"

namespace blockfetch {

class ChunkedStore;

/// Anything with a length and ranged row access.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::uint64_t size() const = 0;
    /// `ranges` are sorted and non-overlapping; rows come back in order.
    virtual MultiPayload read_ranges(std::span<const RowRange> ranges) const = 0;
};

/// Columns produced by StoreBackend.
inline constexpr const char* kRowsColumn = "x";
inline constexpr const char* kLabelColumn = "label";
inline constexpr const char* kPlateColumn = "plate";

/**
 * Backend over a ChunkedStore, optionally restricted to the window
 * [first_row, first_row + rows). Produces a sparse "x" column (unless
 * labels_only) plus "label" and "plate".
 */
class StoreBackend final : public Backend {
public:
    explicit StoreBackend(const ChunkedStore& store, bool labels_only = false);
    StoreBackend(const ChunkedStore& store, std::uint64_t first_row, std::uint64_t rows, bool labels_only = false);

    std::uint64_t size() const override { return rows_; }
    MultiPayload read_ranges(std::span<const RowRange> ranges) const override;

private:
    const ChunkedStore* store_;
    std::uint64_t first_row_ = 0;
    std::uint64_t rows_ = 0;
    bool labels_only_ = false;
};

/// Backend over a payload already in memory. Counts calls and ranges.
class InMemoryBackend final : public Backend {
public:
    explicit InMemoryBackend(MultiPayload data) : data_(std::move(data)) {}

    std::uint64_t size() const override { return data_.size(); }
    MultiPayload read_ranges(std::span<const RowRange> ranges) const override;

    const MultiPayload& data() const noexcept { return data_; }
    std::uint64_t calls() const noexcept { return calls_.load(); }
    std::uint64_t range_reads() const noexcept { return ranges_.load(); }

private:
    MultiPayload data_;
    mutable std::atomic<std::uint64_t> calls_{0};
    mutable std::atomic<std::uint64_t> ranges_{0};
};

// ---------------------------------------------------------------------------
// Callbacks and minibatches
// ---------------------------------------------------------------------------

using FetchCallback = std::function<MultiPayload(const Backend&, std::span<const RowIndex> sorted_unique)>;
using PayloadTransform = std::function<MultiPayload(MultiPayload)>;
using BatchCallback = std::function<MultiPayload(const MultiPayload&, std::span<const std::size_t> positions)>;

/// Hooks run for every fetch (fetch_*) and every minibatch (batch_*). Empty
/// members use the defaults: ranged read of coalesced indices, identity,
/// positional take, identity.
struct CallbackSet {
    FetchCallback fetch_callback;
    PayloadTransform fetch_transform;
    BatchCallback batch_callback;
    PayloadTransform batch_transform;
};

MultiPayload default_fetch(const Backend& backend, std::span<const RowIndex> sorted_unique);

/// fetch_transform replacing a sparse column with its dense expansion.
PayloadTransform densify(std::string column = kRowsColumn);

struct Minibatch {
    MultiPayload payload;
    std::vector<RowIndex> source_indices;
    std::uint64_t fetch_position = 0;
    std::uint64_t index_in_fetch = 0;

    std::size_t size() const noexcept { return source_indices.size(); }
};

/// Raised when a hook or the backend fails; names the hook and fetch.
class PipelineError : public std::runtime_error {
public:
    PipelineError(std::string hook, std::uint64_t fetch_position, const std::string& cause);

    const std::string& hook() const noexcept { return hook_; }
    std::uint64_t fetch_position() const noexcept { return fetch_position_; }

private:
    std::string hook_;
    std::uint64_t fetch_position_;
};

class MinibatchSource {
public:
    virtual ~MinibatchSource() = default;
    /// Next minibatch, or nullopt at end of epoch.
    virtual std::optional<Minibatch> next() = 0;
};

/// Produces all minibatches of one fetch at a time.
class FetchSource {
public:
    virtual ~FetchSource() = default;
    virtual std::optional<std::vector<Minibatch>> next_fetch() = 0;
};

/**
 * Executes a plan: for each fetch set, sort, read once, transform once,
 * permute positions in memory, split into minibatches of m, and run the
 * per-batch hooks. The in-memory permutation of fetch `p` is seeded from
 * (epoch seed, "fetch-shuffle", p), so any worker that processes fetch p
 * produces the same minibatches.
 */
class FetchLoader final : public MinibatchSource, public FetchSource {
public:
    /// Processes every fetch of the plan.
    FetchLoader(IndexPlan plan, const Backend& backend, SamplerConfig cfg, CallbackSet callbacks = {});
    /// Processes only `positions` (ascending), e.g. a worker's share.
    FetchLoader(std::shared_ptr<const IndexPlan> plan, std::vector<std::uint64_t> positions, const Backend& backend,
                SamplerConfig cfg, CallbackSet callbacks = {});

    std::optional<Minibatch> next() override;
    std::optional<std::vector<Minibatch>> next_fetch() override;

    std::uint64_t fetches_done() const noexcept { return cursor_; }

private:
    std::vector<Minibatch> run_fetch(const FetchIndexSet& fetch);

    std::shared_ptr<const IndexPlan> plan_;
    std::vector<std::uint64_t> positions_;
    const Backend* backend_;
    SamplerConfig cfg_;
    CallbackSet callbacks_;
    std::size_t cursor_ = 0;
    std::deque<Minibatch> pending_;
};

/**
 * Shuffle-buffer streaming. Rows are read sequentially in chunks of m*f.
 * The buffer is filled with the first buffer_rows rows; each emitted row is
 * drawn uniformly from the buffer and its slot refilled with the next
 * sequential row. Every row is emitted exactly once per epoch.
 */
class BufferedStream final : public MinibatchSource {
public:
    BufferedStream(const Backend& backend, SamplerConfig cfg, std::uint64_t epoch = 0, CallbackSet callbacks = {});

    std::optional<Minibatch> next() override;

private:
    struct Chunk {
        MultiPayload payload;
        std::uint64_t first_row = 0;
        std::size_t live = 0;
    };
    struct Slot {
        std::uint64_t chunk;
        std::size_t pos;
    };

    void load_chunk();
    std::optional<Slot> next_sequential();

    const Backend* backend_;
    SamplerConfig cfg_;
    CallbackSet callbacks_;
    Xoshiro256 rng_;
    std::deque<Chunk> chunks_;  // chunks_[i] has id chunk_base_ + i
    std::uint64_t chunk_base_ = 0;
    std::uint64_t next_row_ = 0;      // next row to read from the backend
    std::uint64_t seq_chunk_ = 0;     // id of the chunk holding the next sequential row
    std::size_t seq_pos_ = 0;
    std::vector<Slot> buffer_;
    bool primed_ = false;
    std::uint64_t emitted_ = 0;
};

/// Stream for one epoch: BufferedStream for StreamingBuffered, otherwise a
/// FetchLoader over build_plan(cfg, epoch).
std::unique_ptr<MinibatchSource> make_stream(const Backend& backend, const SamplerConfig& cfg, std::uint64_t epoch = 0,
                                             CallbackSet callbacks = {});

}  // namespace blockfetch

#endif  // BLOCKFETCH_PIPELINE_HPP
