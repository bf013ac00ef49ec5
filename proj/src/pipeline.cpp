#include "blockfetch/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "blockfetch/store.hpp"

namespace blockfetch {

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

StoreBackend::StoreBackend(const ChunkedStore& store, bool labels_only)
    : StoreBackend(store, 0, store.size(), labels_only) {}

StoreBackend::StoreBackend(const ChunkedStore& store, std::uint64_t first_row, std::uint64_t rows, bool labels_only)
    : store_(&store), first_row_(first_row), rows_(rows), labels_only_(labels_only) {
    if (first_row + rows > store.size() || first_row + rows < first_row)
        throw ConfigError("StoreBackend window exceeds store size");
}

MultiPayload StoreBackend::read_ranges(std::span<const RowRange> ranges) const {
    std::vector<RowRange> global;
    global.reserve(ranges.size());
    for (const auto& r : ranges) {
        if (r.end() > rows_) throw ConfigError("row range outside backend window");
        global.push_back({r.start + first_row_, r.len});
    }
    auto batch = store_->read_rows(global, ReadOptions{.matrix = !labels_only_});
    MultiPayload out;
    if (!labels_only_) out.add(kRowsColumn, std::move(batch.rows));
    out.add(kLabelColumn, LabelColumn(batch.labels.begin(), batch.labels.end()));
    out.add(kPlateColumn, LabelColumn(batch.plates.begin(), batch.plates.end()));
    return out;
}

MultiPayload InMemoryBackend::read_ranges(std::span<const RowRange> ranges) const {
    calls_.fetch_add(1);
    ranges_.fetch_add(ranges.size());
    std::vector<std::size_t> positions;
    for (const auto& r : ranges) {
        if (r.end() > data_.size()) throw ConfigError("row range outside in-memory backend");
        for (auto i = r.start; i < r.end(); ++i) positions.push_back(static_cast<std::size_t>(i));
    }
    return data_.take(positions);
}

MultiPayload default_fetch(const Backend& backend, std::span<const RowIndex> sorted_unique) {
    const auto ranges = coalesce(sorted_unique);
    return backend.read_ranges(ranges);
}

PayloadTransform densify(std::string column) {
    return [column = std::move(column)](MultiPayload payload) {
        auto& col = payload.at(column);
        if (const auto* sparse = std::get_if<SparseRows>(&col)) col = to_dense(*sparse);
        return payload;
    };
}

PipelineError::PipelineError(std::string hook, std::uint64_t fetch_position, const std::string& cause)
    : std::runtime_error(hook + " failed at fetch " + std::to_string(fetch_position) + ": " + cause),
      hook_(std::move(hook)),
      fetch_position_(fetch_position) {}

namespace {

template <class F>
auto guarded(const char* hook, std::uint64_t position, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(hook, position, e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// FetchLoader
// ---------------------------------------------------------------------------

FetchLoader::FetchLoader(IndexPlan plan, const Backend& backend, SamplerConfig cfg, CallbackSet callbacks)
    : plan_(std::make_shared<const IndexPlan>(std::move(plan))),
      backend_(&backend),
      cfg_(std::move(cfg)),
      callbacks_(std::move(callbacks)) {
    positions_.resize(plan_->fetch_batches.size());
    std::iota(positions_.begin(), positions_.end(), std::uint64_t{0});
}

FetchLoader::FetchLoader(std::shared_ptr<const IndexPlan> plan, std::vector<std::uint64_t> positions,
                         const Backend& backend, SamplerConfig cfg, CallbackSet callbacks)
    : plan_(std::move(plan)),
      positions_(std::move(positions)),
      backend_(&backend),
      cfg_(std::move(cfg)),
      callbacks_(std::move(callbacks)) {
    for (auto p : positions_)
        if (p >= plan_->fetch_batches.size()) throw ConfigError("fetch position outside plan");
}

std::optional<Minibatch> FetchLoader::next() {
    while (pending_.empty()) {
        auto fetch = next_fetch();
        if (!fetch) return std::nullopt;
        for (auto& mb : *fetch) pending_.push_back(std::move(mb));
    }
    Minibatch mb = std::move(pending_.front());
    pending_.pop_front();
    return mb;
}

std::optional<std::vector<Minibatch>> FetchLoader::next_fetch() {
    if (cursor_ >= positions_.size()) return std::nullopt;
    const auto& fetch = plan_->fetch_batches[positions_[cursor_]];
    ++cursor_;
    return run_fetch(fetch);
}

std::vector<Minibatch> FetchLoader::run_fetch(const FetchIndexSet& fetch) {
    const std::uint64_t pos = fetch.position;

    // Sort; duplicates are read once and expanded in memory.
    std::vector<RowIndex> sorted = fetch.indices;
    std::stable_sort(sorted.begin(), sorted.end());
    std::vector<RowIndex> unique;
    std::vector<std::size_t> expanded;  // position in `unique` for every sorted entry
    unique.reserve(sorted.size());
    expanded.reserve(sorted.size());
    for (auto idx : sorted) {
        if (unique.empty() || unique.back() != idx) unique.push_back(idx);
        expanded.push_back(unique.size() - 1);
    }

    MultiPayload fetched = guarded("fetch_callback", pos, [&] {
        auto payload = callbacks_.fetch_callback ? callbacks_.fetch_callback(*backend_, unique)
                                                 : default_fetch(*backend_, unique);
        if (payload.size() != unique.size())
            throw PayloadError("fetched " + std::to_string(payload.size()) + " rows, expected " +
                               std::to_string(unique.size()));
        return payload;
    });
    if (callbacks_.fetch_transform) {
        fetched = guarded("fetch_transform", pos, [&] {
            auto payload = callbacks_.fetch_transform(std::move(fetched));
            if (payload.size() != unique.size()) throw PayloadError("fetch_transform changed the row count");
            return payload;
        });
    }

    // Permute positions, not payload rows.
    if (shuffles_fetches(cfg_.strategy)) {
        Xoshiro256 rng(derive_seed(epoch_seed(cfg_.seed, plan_->epoch), "fetch-shuffle", pos));
        shuffle(std::span<std::size_t>(expanded), rng);
    }

    std::vector<Minibatch> out;
    const std::size_t m = cfg_.batch_size;
    out.reserve((expanded.size() + m - 1) / m);
    for (std::size_t start = 0, j = 0; start < expanded.size(); start += m, ++j) {
        const std::span<const std::size_t> slice(expanded.data() + start, std::min(m, expanded.size() - start));
        Minibatch mb;
        mb.fetch_position = pos;
        mb.index_in_fetch = j;
        mb.source_indices.reserve(slice.size());
        for (auto p : slice) mb.source_indices.push_back(unique[p]);
        mb.payload = guarded("batch_callback", pos, [&] {
            return callbacks_.batch_callback ? callbacks_.batch_callback(fetched, slice) : fetched.take(slice);
        });
        if (callbacks_.batch_transform) {
            mb.payload = guarded("batch_transform", pos, [&] { return callbacks_.batch_transform(std::move(mb.payload)); });
        }
        out.push_back(std::move(mb));
    }
    return out;
}

// ---------------------------------------------------------------------------
// BufferedStream
// ---------------------------------------------------------------------------

BufferedStream::BufferedStream(const Backend& backend, SamplerConfig cfg, std::uint64_t epoch, CallbackSet callbacks)
    : backend_(&backend), cfg_(std::move(cfg)), callbacks_(std::move(callbacks)) {
    validate(cfg_);
    const auto* buffered = std::get_if<StreamingBuffered>(&cfg_.strategy);
    if (buffered == nullptr) throw ConfigError("BufferedStream requires the StreamingBuffered strategy");
    rng_.reseed(derive_seed(epoch_seed(cfg_.seed, epoch), "shuffle-buffer", 0));
    buffer_.reserve(buffered->buffer_rows);
}

void BufferedStream::load_chunk() {
    const std::uint64_t n = std::min(cfg_.n, backend_->size());
    const std::uint64_t len = std::min(cfg_.fetch_rows(), n - next_row_);
    const std::uint64_t pos = chunk_base_ + chunks_.size();
    std::vector<RowIndex> idx(len);
    std::iota(idx.begin(), idx.end(), next_row_);
    MultiPayload payload = guarded("fetch_callback", pos, [&] {
        return callbacks_.fetch_callback ? callbacks_.fetch_callback(*backend_, idx) : default_fetch(*backend_, idx);
    });
    if (callbacks_.fetch_transform) {
        payload = guarded("fetch_transform", pos, [&] { return callbacks_.fetch_transform(std::move(payload)); });
    }
    chunks_.push_back({std::move(payload), next_row_, static_cast<std::size_t>(len)});
    next_row_ += len;
}

std::optional<BufferedStream::Slot> BufferedStream::next_sequential() {
    const std::uint64_t n = std::min(cfg_.n, backend_->size());
    const std::uint64_t loaded_end = chunk_base_ + chunks_.size();
    if (seq_chunk_ < loaded_end && seq_pos_ >= chunks_[seq_chunk_ - chunk_base_].payload.size()) {
        ++seq_chunk_;
        seq_pos_ = 0;
    }
    if (seq_chunk_ >= chunk_base_ + chunks_.size()) {
        if (next_row_ >= n) return std::nullopt;
        load_chunk();
    }
    return Slot{seq_chunk_, seq_pos_++};
}

std::optional<Minibatch> BufferedStream::next() {
    const auto capacity = std::get<StreamingBuffered>(cfg_.strategy).buffer_rows;
    if (!primed_) {
        while (buffer_.size() < capacity) {
            auto slot = next_sequential();
            if (!slot) break;
            buffer_.push_back(*slot);
        }
        primed_ = true;
    }
    if (buffer_.empty()) return std::nullopt;

    // Draw the minibatch without replacement (partial Fisher-Yates into the
    // front of the buffer), then refill the vacated slots.
    const std::size_t take = std::min<std::size_t>(cfg_.batch_size, buffer_.size());
    std::vector<Slot> picked;
    picked.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng_.below(buffer_.size() - i);
        std::swap(buffer_[i], buffer_[j]);
        picked.push_back(buffer_[i]);
    }
    std::size_t refilled = 0;
    while (refilled < take) {
        auto refill = next_sequential();
        if (!refill) break;
        buffer_[refilled++] = *refill;
    }
    buffer_.erase(buffer_.begin() + static_cast<std::ptrdiff_t>(refilled),
                  buffer_.begin() + static_cast<std::ptrdiff_t>(take));

    // Group by chunk (stable), so payload order matches source_indices.
    std::stable_sort(picked.begin(), picked.end(), [](const Slot& a, const Slot& b) { return a.chunk < b.chunk; });
    const std::uint64_t pos = emitted_;
    Minibatch mb;
    mb.fetch_position = pos;
    std::vector<MultiPayload> pieces;
    for (std::size_t i = 0; i < picked.size();) {
        std::size_t k = i;
        std::vector<std::size_t> positions;
        auto& chunk = chunks_[picked[i].chunk - chunk_base_];
        while (k < picked.size() && picked[k].chunk == picked[i].chunk) {
            positions.push_back(picked[k].pos);
            mb.source_indices.push_back(chunk.first_row + picked[k].pos);
            ++k;
        }
        pieces.push_back(guarded("batch_callback", pos, [&] {
            return callbacks_.batch_callback ? callbacks_.batch_callback(chunk.payload, positions)
                                             : chunk.payload.take(positions);
        }));
        chunk.live -= positions.size();
        i = k;
    }
    mb.payload = pieces.size() == 1 ? std::move(pieces.front()) : MultiPayload::concat(pieces);
    if (callbacks_.batch_transform) {
        mb.payload = guarded("batch_transform", pos, [&] { return callbacks_.batch_transform(std::move(mb.payload)); });
    }
    while (!chunks_.empty() && chunks_.front().live == 0 && chunk_base_ < seq_chunk_) {
        chunks_.pop_front();
        ++chunk_base_;
    }
    ++emitted_;
    return mb;
}

std::unique_ptr<MinibatchSource> make_stream(const Backend& backend, const SamplerConfig& cfg, std::uint64_t epoch,
                                             CallbackSet callbacks) {
    if (std::holds_alternative<StreamingBuffered>(cfg.strategy))
        return std::make_unique<BufferedStream>(backend, cfg, epoch, std::move(callbacks));
    return std::make_unique<FetchLoader>(build_plan(cfg, epoch), backend, cfg, std::move(callbacks));
}

}  // namespace blockfetch
