#ifndef BLOCKFETCH_STORE_HPP
#define BLOCKFETCH_STORE_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "blockfetch/payload.hpp"

namespace blockfetch {

/// I/O or format failure. Carries the file and, when known, a byte offset.
class StoreError : public std::runtime_error {
public:
    StoreError(const std::filesystem::path& path, std::optional<std::uint64_t> offset, const std::string& what);

    const std::filesystem::path& path() const noexcept { return path_; }
    std::optional<std::uint64_t> offset() const noexcept { return offset_; }

private:
    std::filesystem::path path_;
    std::optional<std::uint64_t> offset_;
};

// ---------------------------------------------------------------------------
// Shard file format
//
// Little-endian. A 128-byte header followed by four sections, each starting
// on a 64-byte boundary:
//
//   off  size  field
//     0     8  magic "BFSHARD\0"
//     8     4  version (u32, = 1)
//    12     2  label_count (u16)
//    14     2  reserved (0)
//    16     8  n_rows
//    24     8  n_cols
//    32     8  nnz
//    40     8  indptr offset       (n_rows+1) x u64
//    48     8  col_indices offset  nnz x u32
//    56     8  values offset       nnz x f32
//    64     8  row_labels offset   n_rows x u16
//    72    16  CRC-32 of each section, same order (4 x u32)
//    88     4  CRC-32 of header bytes [0, 88)
//    92    36  zero padding
//
// Padding between sections is zero-filled.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kShardMagic{'B', 'F', 'S', 'H', 'A', 'R', 'D', '\0'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::uint64_t kShardHeaderSize = 128;
inline constexpr std::uint64_t kSectionAlignment = 64;

struct ShardHeader {
    std::uint32_t version = kShardVersion;
    std::uint16_t label_count = 0;
    std::uint64_t n_rows = 0;
    std::uint64_t n_cols = 0;
    std::uint64_t nnz = 0;
    std::uint64_t indptr_offset = 0;
    std::uint64_t indices_offset = 0;
    std::uint64_t values_offset = 0;
    std::uint64_t labels_offset = 0;
    std::array<std::uint32_t, 4> section_crc{};
    std::uint32_t header_crc = 0;

    std::uint64_t file_size() const noexcept;
};

/// In-memory contents of one shard.
struct ShardData {
    SparseRows rows;
    std::vector<std::uint16_t> labels;
    std::uint16_t label_count = 0;

    bool operator==(const ShardData&) const = default;
};

/// Writes `data` to `path`, fsyncs, and returns the header written.
ShardHeader write_shard(const std::filesystem::path& path, const ShardData& data);

/// Parses and validates a shard header from its first 128 bytes.
ShardHeader parse_shard_header(std::span<const std::uint8_t> bytes, const std::filesystem::path& path);

/// Reads an entire shard into memory, verifying checksums and invariants.
ShardData load_shard(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestShard {
    std::string path;  ///< relative to the manifest directory
    std::uint64_t n_rows = 0;
    std::string plate;  ///< plate name; constant for every row of the shard
};

/**
 * Text document describing a sharded store:
 *
 *   blockfetch-manifest 1
 *   n_cols 256
 *   total_rows 1400
 *   labels A B C            # row label vocabulary
 *   label_groups 0 0 1      # optional: group code per label
 *   groups g0 g1            # optional: group vocabulary
 *   shards 14
 *   shard 0 0 100 plate_00 shard_00.bfs
 *   ...                     # shard <index> <row_offset> <n_rows> <plate> <path>
 *
 * Names may not contain whitespace.
 */
struct Manifest {
    std::filesystem::path directory;
    std::uint64_t n_cols = 0;
    std::vector<std::string> labels;
    std::vector<std::uint32_t> label_groups;
    std::vector<std::string> groups;
    std::vector<ManifestShard> shards;

    std::uint64_t total_rows() const noexcept;
    /// Global row offset of every shard plus a final entry equal to total_rows().
    std::vector<std::uint64_t> offsets() const;
    std::vector<std::string> plates() const;

    std::string to_text() const;
    static Manifest parse(const std::string& text, const std::filesystem::path& directory);
    static Manifest load(const std::filesystem::path& manifest_path);
    void save(const std::filesystem::path& manifest_path) const;
};

inline constexpr const char* kManifestFileName = "manifest.txt";

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

struct IoCounters {
    std::uint64_t range_reads = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t rows_read = 0;

    IoCounters operator-(const IoCounters& o) const noexcept {
        return {range_reads - o.range_reads, bytes_read - o.bytes_read, rows_read - o.rows_read};
    }
    bool operator==(const IoCounters&) const = default;
};

/// Rows from one read_rows call, in request order.
struct RowBatch {
    SparseRows rows;
    std::vector<std::uint16_t> labels;
    std::vector<std::uint16_t> plates;  ///< shard index of each row
};

struct OpenOptions {
    bool verify = true;  ///< checksums and CSR invariants, on open only
};

struct ReadOptions {
    bool matrix = true;  ///< false: labels and plates only
};

/**
 * Read-only handle over a sharded store. Shards are memory-mapped with a
 * random-access hint; each requested range is prefetched as one
 * sequential region before it is copied out. Safe for concurrent readers.
 */
class ChunkedStore {
public:
    static ChunkedStore open(const std::filesystem::path& manifest_path, OpenOptions options = {});

    ChunkedStore(ChunkedStore&&) noexcept;
    ChunkedStore& operator=(ChunkedStore&&) noexcept;
    ~ChunkedStore();

    const Manifest& manifest() const noexcept;
    std::uint64_t size() const noexcept;
    std::uint64_t n_cols() const noexcept;

    /// Ranges must be sorted ascending and non-overlapping. Adjacent ranges
    /// are merged; a range crossing a shard boundary becomes one read per
    /// shard.
    RowBatch read_rows(std::span<const RowRange> ranges, ReadOptions options = {}) const;

    /// Totals since open.
    IoCounters io_counters() const noexcept;
    std::vector<IoCounters> shard_counters() const;

    /// Asks the kernel to evict this store's pages from the page cache.
    void drop_page_cache() const;
    std::uint64_t bytes_on_disk() const noexcept;

private:
    struct Impl;
    explicit ChunkedStore(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Row labels equal the plate (shard) code.
struct PlateLabels {};

/**
 * Labels correlated with on-disk position. Outside the last shard, rows
 * carry classes 0..classes-1 in long ascending runs, so sequential reads see
 * one class at a time. Class c belongs to group c*groups/classes. With
 * `mixed_last_shard`, the last shard gets labels drawn uniformly instead
 * (a held-out plate containing every class).
 */
struct ClusteredLabels {
    std::uint32_t classes = 4;
    std::uint32_t groups = 0;  ///< 0 = no grouping
    bool mixed_last_shard = true;
};

/// Value model: class means plus plate offsets plus unit Gaussian noise.
/// Without it, values are uniform in (0, 1].
struct ClassSignal {
    double class_scale = 0.3;
    double plate_scale = 0.3;
    double noise = 1.0;
};

struct SynthSpec {
    std::filesystem::path directory;
    std::uint64_t n_rows = 0;
    std::uint64_t n_cols = 0;
    std::uint32_t shards = 1;
    double density = 1.0;
    std::uint64_t seed = 0;
    /// Fraction of rows per shard; empty = equal. Normalised internally.
    std::vector<double> plate_proportions;
    /// Shard sizes are multiples of this many rows where possible.
    std::uint64_t shard_alignment = 1;
    std::variant<PlateLabels, ClusteredLabels> labels = PlateLabels{};
    std::optional<ClassSignal> signal;
};

/// Rows per shard for a spec (largest-remainder rounding in alignment units).
std::vector<std::uint64_t> shard_sizes(const SynthSpec& spec);

/// Content of shard `index`, generated in memory. Deterministic given spec.
ShardData synthesize_shard(const SynthSpec& spec, std::uint32_t index);

/// Writes every shard plus manifest.txt under spec.directory.
Manifest generate_synthetic(const SynthSpec& spec);

}  // namespace blockfetch

#endif  // BLOCKFETCH_STORE_HPP
