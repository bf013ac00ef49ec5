#ifndef BLOCKFETCH_DIST_HPP
#define BLOCKFETCH_DIST_HPP

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "blockfetch/pipeline.hpp"
#include "blockfetch/sampling.hpp"

namespace blockfetch {

/// Position of one worker in an R-rank x W-worker layout.
struct Topology {
    std::uint32_t world_size = 1;
    std::uint32_t rank = 0;
    std::uint32_t workers_per_rank = 1;
    std::uint32_t worker_id = 0;

    void validate() const;
};

/// Fetch positions of `topo`'s rank: {rank, rank + R, rank + 2R, ...}.
std::vector<std::uint64_t> rank_fetches(std::uint64_t total_fetches, const Topology& topo);

/// Fetch positions of (rank, worker): every W-th of the rank's positions,
/// starting at the worker id. No padding; tails may be uneven.
std::vector<std::uint64_t> assign_fetches(std::uint64_t total_fetches, const Topology& topo);

/**
 * In-process stand-in for a broadcast from rank 0. Rank 0 publishes; every
 * other rank blocks until the value is available.
 */
class SeedBroadcast {
public:
    void publish(std::uint64_t seed);
    std::uint64_t wait() const;

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::optional<std::uint64_t> seed_;
};

/// Rank 0's seed for every rank. With world_size 1, or no channel, the
/// local seed is returned unchanged.
std::uint64_t shared_seed(const Topology& topo, std::uint64_t local_seed, SeedBroadcast* channel = nullptr);

/**
 * Runs one thread per FetchSource, each feeding a bounded queue of whole
 * fetches, and yields their minibatches round-robin by worker. With
 * assign_fetches' layout this is ascending fetch position. A worker failure
 * is rethrown from next().
 */
class MergedStream final : public MinibatchSource {
public:
    explicit MergedStream(std::vector<std::unique_ptr<FetchSource>> workers, std::size_t queue_capacity = 2);
    ~MergedStream() override;

    MergedStream(const MergedStream&) = delete;
    MergedStream& operator=(const MergedStream&) = delete;

    std::optional<Minibatch> next() override;

private:
    struct Channel;
    std::vector<std::unique_ptr<Channel>> channels_;
    std::size_t turn_ = 0;
    std::size_t finished_ = 0;
    std::vector<Minibatch> current_;
    std::size_t current_pos_ = 0;
};

std::unique_ptr<MinibatchSource> merge_streams(std::vector<std::unique_ptr<FetchSource>> workers,
                                               std::size_t queue_capacity = 2);

/**
 * Everything rank `topo.rank` yields in one epoch: the global plan from
 * `cfg`, this rank's fetch positions split over `topo.workers_per_rank`
 * workers, merged. The worker_id field of `topo` is ignored.
 */
std::unique_ptr<MinibatchSource> make_rank_stream(const Backend& backend, const SamplerConfig& cfg, std::uint64_t epoch,
                                                  const Topology& topo, CallbackSet callbacks = {});

}  // namespace blockfetch

#endif  // BLOCKFETCH_DIST_HPP
