#include "blockfetch/dist.hpp"

#include <deque>
#include <exception>
#include <thread>
#include <variant>

namespace blockfetch {

void Topology::validate() const {
    if (world_size == 0) throw ConfigError("world_size must be >= 1");
    if (rank >= world_size) throw ConfigError("rank must be in [0, world_size)");
    if (workers_per_rank == 0) throw ConfigError("workers_per_rank must be >= 1");
    if (worker_id >= workers_per_rank) throw ConfigError("worker_id must be in [0, workers_per_rank)");
}

std::vector<std::uint64_t> rank_fetches(std::uint64_t total_fetches, const Topology& topo) {
    topo.validate();
    std::vector<std::uint64_t> out;
    out.reserve(total_fetches / topo.world_size + 1);
    for (std::uint64_t p = topo.rank; p < total_fetches; p += topo.world_size) out.push_back(p);
    return out;
}

std::vector<std::uint64_t> assign_fetches(std::uint64_t total_fetches, const Topology& topo) {
    const auto mine = rank_fetches(total_fetches, topo);
    std::vector<std::uint64_t> out;
    out.reserve(mine.size() / topo.workers_per_rank + 1);
    for (std::size_t i = topo.worker_id; i < mine.size(); i += topo.workers_per_rank) out.push_back(mine[i]);
    return out;
}

void SeedBroadcast::publish(std::uint64_t seed) {
    {
        std::lock_guard lock(mu_);
        seed_ = seed;
    }
    cv_.notify_all();
}

std::uint64_t SeedBroadcast::wait() const {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return seed_.has_value(); });
    return *seed_;
}

std::uint64_t shared_seed(const Topology& topo, std::uint64_t local_seed, SeedBroadcast* channel) {
    topo.validate();
    if (topo.world_size == 1 || channel == nullptr) return local_seed;
    if (topo.rank == 0) {
        channel->publish(local_seed);
        return local_seed;
    }
    return channel->wait();
}

// ---------------------------------------------------------------------------
// MergedStream
// ---------------------------------------------------------------------------

struct MergedStream::Channel {
    struct Done {};
    using Item = std::variant<std::vector<Minibatch>, Done, std::exception_ptr>;

    std::mutex mu;
    std::condition_variable not_empty;
    std::condition_variable not_full;
    std::deque<Item> items;
    std::size_t capacity = 2;
    bool closed = false;
    std::thread thread;

    // Returns false if the consumer closed the channel.
    bool push(Item item) {
        std::unique_lock lock(mu);
        not_full.wait(lock, [&] { return closed || items.size() < capacity; });
        if (closed) return false;
        items.push_back(std::move(item));
        not_empty.notify_one();
        return true;
    }

    Item pop() {
        std::unique_lock lock(mu);
        not_empty.wait(lock, [&] { return !items.empty(); });
        Item item = std::move(items.front());
        items.pop_front();
        not_full.notify_one();
        return item;
    }

    void close() {
        {
            std::lock_guard lock(mu);
            closed = true;
        }
        not_full.notify_all();
    }
};

MergedStream::MergedStream(std::vector<std::unique_ptr<FetchSource>> workers, std::size_t queue_capacity) {
    for (auto& worker : workers) {
        auto ch = std::make_unique<Channel>();
        ch->capacity = std::max<std::size_t>(1, queue_capacity);
        Channel* raw = ch.get();
        ch->thread = std::thread([raw, source = std::move(worker)]() mutable {
            try {
                while (auto fetch = source->next_fetch()) {
                    if (!raw->push(std::move(*fetch))) return;
                }
                raw->push(Channel::Done{});
            } catch (...) {
                raw->push(std::current_exception());
            }
        });
        channels_.push_back(std::move(ch));
    }
}

MergedStream::~MergedStream() {
    for (auto& ch : channels_) ch->close();
    for (auto& ch : channels_)
        if (ch->thread.joinable()) ch->thread.join();
}

std::optional<Minibatch> MergedStream::next() {
    while (current_pos_ >= current_.size()) {
        if (finished_ == channels_.size()) return std::nullopt;
        // Skip workers that already finished.
        auto& ch = channels_[turn_ % channels_.size()];
        ++turn_;
        if (ch->closed) continue;
        auto item = ch->pop();
        if (auto* fetch = std::get_if<std::vector<Minibatch>>(&item)) {
            current_ = std::move(*fetch);
            current_pos_ = 0;
        } else if (std::holds_alternative<Channel::Done>(item)) {
            ch->close();
            ++finished_;
        } else {
            for (auto& other : channels_) other->close();
            finished_ = channels_.size();
            std::rethrow_exception(std::get<std::exception_ptr>(item));
        }
    }
    return std::move(current_[current_pos_++]);
}

std::unique_ptr<MinibatchSource> merge_streams(std::vector<std::unique_ptr<FetchSource>> workers,
                                               std::size_t queue_capacity) {
    return std::make_unique<MergedStream>(std::move(workers), queue_capacity);
}

namespace {

// Adapts a FetchLoader to MinibatchSource ownership for the single-worker case.
class OwnedLoader final : public MinibatchSource {
public:
    explicit OwnedLoader(std::unique_ptr<FetchLoader> loader) : loader_(std::move(loader)) {}
    std::optional<Minibatch> next() override { return loader_->next(); }

private:
    std::unique_ptr<FetchLoader> loader_;
};

}  // namespace

std::unique_ptr<MinibatchSource> make_rank_stream(const Backend& backend, const SamplerConfig& cfg, std::uint64_t epoch,
                                                  const Topology& topo, CallbackSet callbacks) {
    Topology t = topo;
    t.worker_id = 0;
    t.validate();
    if (std::holds_alternative<StreamingBuffered>(cfg.strategy)) {
        if (t.world_size != 1 || t.workers_per_rank != 1)
            throw ConfigError("buffered streaming does not support multiple ranks or workers");
        return make_stream(backend, cfg, epoch, std::move(callbacks));
    }
    auto plan = std::make_shared<const IndexPlan>(build_plan(cfg, epoch));
    const auto total = plan->fetch_batches.size();
    if (t.workers_per_rank == 1) {
        return std::make_unique<OwnedLoader>(
            std::make_unique<FetchLoader>(plan, assign_fetches(total, t), backend, cfg, std::move(callbacks)));
    }
    std::vector<std::unique_ptr<FetchSource>> workers;
    for (std::uint32_t w = 0; w < t.workers_per_rank; ++w) {
        t.worker_id = w;
        workers.push_back(std::make_unique<FetchLoader>(plan, assign_fetches(total, t), backend, cfg, callbacks));
    }
    return merge_streams(std::move(workers));
}

}  // namespace blockfetch
