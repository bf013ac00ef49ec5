#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "blockfetch/store.hpp"
#include "store_internal.hpp"

#ifndef MADV_POPULATE_READ
#define MADV_POPULATE_READ 22
#endif

namespace blockfetch {

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::uint64_t Manifest::total_rows() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : shards) total += s.n_rows;
    return total;
}

std::vector<std::uint64_t> Manifest::offsets() const {
    std::vector<std::uint64_t> out;
    out.reserve(shards.size() + 1);
    std::uint64_t acc = 0;
    for (const auto& s : shards) {
        out.push_back(acc);
        acc += s.n_rows;
    }
    out.push_back(acc);
    return out;
}

std::vector<std::string> Manifest::plates() const {
    std::vector<std::string> out;
    for (const auto& s : shards) out.push_back(s.plate);
    return out;
}

std::string Manifest::to_text() const {
    std::ostringstream os;
    os << "blockfetch-manifest 1\n";
    os << "n_cols " << n_cols << "\n";
    os << "total_rows " << total_rows() << "\n";
    os << "labels";
    for (const auto& l : labels) os << ' ' << l;
    os << "\n";
    if (!label_groups.empty()) {
        os << "label_groups";
        for (auto g : label_groups) os << ' ' << g;
        os << "\ngroups";
        for (const auto& g : groups) os << ' ' << g;
        os << "\n";
    }
    os << "shards " << shards.size() << "\n";
    const auto offs = offsets();
    for (std::size_t i = 0; i < shards.size(); ++i) {
        os << "shard " << i << ' ' << offs[i] << ' ' << shards[i].n_rows << ' ' << shards[i].plate << ' '
           << shards[i].path << "\n";
    }
    return os.str();
}

Manifest Manifest::parse(const std::string& text, const std::filesystem::path& directory) {
    const auto manifest_path = directory / kManifestFileName;
    auto fail = [&](std::size_t line, const std::string& what) -> StoreError {
        return StoreError(manifest_path, std::nullopt, "line " + std::to_string(line) + ": " + what);
    };

    Manifest m;
    m.directory = directory;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::optional<std::uint64_t> declared_total;
    std::optional<std::size_t> declared_shards;
    bool saw_magic = false;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (!saw_magic) {
            int version = 0;
            if (key != "blockfetch-manifest" || !(ls >> version)) throw fail(lineno, "not a blockfetch manifest");
            if (version != 1) throw fail(lineno, "unsupported manifest version " + std::to_string(version));
            saw_magic = true;
        } else if (key == "n_cols") {
            if (!(ls >> m.n_cols)) throw fail(lineno, "bad n_cols");
        } else if (key == "total_rows") {
            std::uint64_t t = 0;
            if (!(ls >> t)) throw fail(lineno, "bad total_rows");
            declared_total = t;
        } else if (key == "labels") {
            for (std::string s; ls >> s;) m.labels.push_back(s);
        } else if (key == "label_groups") {
            for (std::uint32_t g; ls >> g;) m.label_groups.push_back(g);
        } else if (key == "groups") {
            for (std::string s; ls >> s;) m.groups.push_back(s);
        } else if (key == "shards") {
            std::size_t s = 0;
            if (!(ls >> s)) throw fail(lineno, "bad shard count");
            declared_shards = s;
        } else if (key == "shard") {
            std::size_t index = 0;
            std::uint64_t offset = 0;
            ManifestShard shard;
            if (!(ls >> index >> offset >> shard.n_rows >> shard.plate >> shard.path)) throw fail(lineno, "bad shard entry");
            if (index != m.shards.size()) throw fail(lineno, "shard entries out of order");
            if (offset != m.total_rows()) throw fail(lineno, "shard row offset inconsistent with preceding shards");
            if (shard.n_rows == 0) throw fail(lineno, "empty shard");
            m.shards.push_back(std::move(shard));
        } else {
            throw fail(lineno, "unknown key '" + key + "'");
        }
    }
    if (!saw_magic) throw fail(lineno, "empty manifest");
    if (m.shards.empty()) throw fail(lineno, "manifest lists no shards");
    if (declared_shards && *declared_shards != m.shards.size()) throw fail(lineno, "shard count mismatch");
    if (declared_total && *declared_total != m.total_rows()) throw fail(lineno, "total_rows mismatch");
    if (!m.label_groups.empty()) {
        if (m.label_groups.size() != m.labels.size()) throw fail(lineno, "label_groups length differs from labels");
        for (auto g : m.label_groups)
            if (g >= m.groups.size()) throw fail(lineno, "label group code out of range");
    }
    if (m.shards.size() > 0xFFFF) throw fail(lineno, "too many shards");
    return m;
}

Manifest Manifest::load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw StoreError(manifest_path, std::nullopt, "cannot open manifest");
    std::stringstream buf;
    buf << in.rdbuf();
    auto m = parse(buf.str(), manifest_path.parent_path().empty() ? std::filesystem::path(".") : manifest_path.parent_path());
    return m;
}

void Manifest::save(const std::filesystem::path& manifest_path) const {
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw StoreError(manifest_path, std::nullopt, "cannot open manifest for writing");
    out << to_text();
    out.flush();
    if (!out) throw StoreError(manifest_path, std::nullopt, "failed writing manifest");
}

// ---------------------------------------------------------------------------
// ChunkedStore
// ---------------------------------------------------------------------------

namespace {

const std::size_t kPageSize = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));

struct MappedShard {
    std::filesystem::path path;
    int fd = -1;
    std::uint8_t* base = nullptr;
    std::size_t size = 0;
    ShardHeader header;

    MappedShard() = default;
    MappedShard(const MappedShard&) = delete;
    MappedShard& operator=(const MappedShard&) = delete;
    MappedShard(MappedShard&& o) noexcept { *this = std::move(o); }
    MappedShard& operator=(MappedShard&& o) noexcept {
        std::swap(path, o.path);
        std::swap(fd, o.fd);
        std::swap(base, o.base);
        std::swap(size, o.size);
        std::swap(header, o.header);
        return *this;
    }
    ~MappedShard() {
        if (base != nullptr) ::munmap(base, size);
        if (fd >= 0) ::close(fd);
    }

    const std::uint64_t* indptr() const { return reinterpret_cast<const std::uint64_t*>(base + header.indptr_offset); }
    const std::uint32_t* indices() const { return reinterpret_cast<const std::uint32_t*>(base + header.indices_offset); }
    const float* values() const { return reinterpret_cast<const float*>(base + header.values_offset); }
    const std::uint16_t* labels() const { return reinterpret_cast<const std::uint16_t*>(base + header.labels_offset); }

    // Regions this large are read with a sequential hint; smaller ones stay
    // on the mapping's random-access default.
    static constexpr std::uint64_t kSequentialRun = 64 * 1024;

    void prefetch(std::uint64_t offset, std::uint64_t len) const {
        if (len >= kSequentialRun) advise(offset, len, MADV_SEQUENTIAL);
        advise(offset, len, MADV_WILLNEED);
    }
    void populate(std::uint64_t offset, std::uint64_t len) const {
        if (len >= kSequentialRun) advise(offset, len, MADV_POPULATE_READ);
    }
    void release(std::uint64_t offset, std::uint64_t len) const {
        if (len >= kSequentialRun) advise(offset, len, MADV_RANDOM);
    }

    void advise(std::uint64_t offset, std::uint64_t len, int advice) const {
        if (len == 0) return;
        const std::uint64_t lo = offset / kPageSize * kPageSize;
        const std::uint64_t hi = std::min<std::uint64_t>(size, offset + len);
        ::madvise(base + lo, hi - lo, advice);
    }
};

MappedShard map_shard(const std::filesystem::path& path) {
    MappedShard s;
    s.path = path;
    s.fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (s.fd < 0) throw StoreError(path, std::nullopt, std::string("open: ") + std::strerror(errno));
    struct stat st {};
    if (::fstat(s.fd, &st) != 0) throw StoreError(path, std::nullopt, std::string("fstat: ") + std::strerror(errno));
    s.size = static_cast<std::size_t>(st.st_size);
    if (s.size < kShardHeaderSize) throw StoreError(path, s.size, "truncated shard header");
    void* p = ::mmap(nullptr, s.size, PROT_READ, MAP_SHARED, s.fd, 0);
    if (p == MAP_FAILED) throw StoreError(path, std::nullopt, std::string("mmap: ") + std::strerror(errno));
    s.base = static_cast<std::uint8_t*>(p);
    s.header = parse_shard_header({s.base, kShardHeaderSize}, path);
    if (s.size < s.header.file_size()) throw StoreError(path, s.size, "truncated shard");
    return s;
}

void verify_shard(const MappedShard& s) {
    const auto& h = s.header;
    s.advise(0, s.size, MADV_SEQUENTIAL);
    const std::uint32_t crcs[4] = {
        detail::crc32_bytes(s.indptr(), (h.n_rows + 1) * 8),
        detail::crc32_bytes(s.indices(), h.nnz * 4),
        detail::crc32_bytes(s.values(), h.nnz * 4),
        detail::crc32_bytes(s.labels(), h.n_rows * 2),
    };
    const std::uint64_t offsets[4] = {h.indptr_offset, h.indices_offset, h.values_offset, h.labels_offset};
    for (int i = 0; i < 4; ++i)
        if (crcs[i] != h.section_crc[i]) throw StoreError(s.path, offsets[i], "corrupt shard: section checksum mismatch");
    detail::check_invariants(h, {s.indptr(), h.n_rows + 1}, {s.indices(), h.nnz}, {s.labels(), h.n_rows}, s.path);
}

struct AtomicCounters {
    std::atomic<std::uint64_t> range_reads{0};
    std::atomic<std::uint64_t> bytes_read{0};
    std::atomic<std::uint64_t> rows_read{0};

    void add(std::uint64_t reads, std::uint64_t bytes, std::uint64_t rows) noexcept {
        range_reads.fetch_add(reads, std::memory_order_relaxed);
        bytes_read.fetch_add(bytes, std::memory_order_relaxed);
        rows_read.fetch_add(rows, std::memory_order_relaxed);
    }
    IoCounters load() const noexcept {
        return {range_reads.load(std::memory_order_relaxed), bytes_read.load(std::memory_order_relaxed),
                rows_read.load(std::memory_order_relaxed)};
    }
};

struct Segment {
    std::size_t shard;
    std::uint64_t lo;  // shard-local rows [lo, hi)
    std::uint64_t hi;
};

}  // namespace

struct ChunkedStore::Impl {
    Manifest manifest;
    std::vector<MappedShard> shards;
    std::vector<std::uint64_t> offsets;
    AtomicCounters totals;
    std::unique_ptr<AtomicCounters[]> per_shard;
};

ChunkedStore::ChunkedStore(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ChunkedStore::ChunkedStore(ChunkedStore&&) noexcept = default;
ChunkedStore& ChunkedStore::operator=(ChunkedStore&&) noexcept = default;
ChunkedStore::~ChunkedStore() = default;

ChunkedStore ChunkedStore::open(const std::filesystem::path& manifest_path, OpenOptions options) {
    auto impl = std::make_unique<Impl>();
    impl->manifest = Manifest::load(manifest_path);
    impl->offsets = impl->manifest.offsets();
    const auto& m = impl->manifest;
    for (const auto& entry : m.shards) {
        auto shard = map_shard(m.directory / entry.path);
        const auto& h = shard.header;
        if (h.n_rows != entry.n_rows) throw StoreError(shard.path, 16, "row count differs from manifest");
        if (h.n_cols != m.n_cols) throw StoreError(shard.path, 24, "column count differs from manifest");
        if (h.label_count != m.labels.size()) throw StoreError(shard.path, 12, "label vocabulary size differs from manifest");
        if (options.verify) verify_shard(shard);
        shard.advise(0, shard.size, MADV_RANDOM);
        impl->shards.push_back(std::move(shard));
    }
    impl->per_shard = std::make_unique<AtomicCounters[]>(impl->shards.size());
    return ChunkedStore(std::move(impl));
}

const Manifest& ChunkedStore::manifest() const noexcept { return impl_->manifest; }
std::uint64_t ChunkedStore::size() const noexcept { return impl_->offsets.back(); }
std::uint64_t ChunkedStore::n_cols() const noexcept { return impl_->manifest.n_cols; }

RowBatch ChunkedStore::read_rows(std::span<const RowRange> ranges, ReadOptions options) const {
    const auto& offsets = impl_->offsets;
    const std::uint64_t total = offsets.back();

    // Merge adjacent ranges and split at shard boundaries.
    std::vector<Segment> segments;
    std::uint64_t prev_end = 0;
    bool first = true;
    for (const auto& r : ranges) {
        if (r.len == 0) continue;
        if (r.end() > total || r.end() < r.start)
            throw StoreError(impl_->manifest.directory / kManifestFileName, std::nullopt,
                             "row range [" + std::to_string(r.start) + ", " + std::to_string(r.end()) +
                                 ") out of bounds for " + std::to_string(total) + " rows");
        if (!first && r.start < prev_end)
            throw StoreError(impl_->manifest.directory / kManifestFileName, std::nullopt,
                             "row ranges must be sorted and non-overlapping");
        std::uint64_t pos = r.start;
        while (pos < r.end()) {
            const auto it = std::upper_bound(offsets.begin(), offsets.end(), pos);
            const auto shard = static_cast<std::size_t>(it - offsets.begin() - 1);
            const std::uint64_t stop = std::min(r.end(), offsets[shard + 1]);
            const std::uint64_t lo = pos - offsets[shard];
            const std::uint64_t hi = stop - offsets[shard];
            if (!segments.empty() && segments.back().shard == shard && segments.back().hi == lo) {
                segments.back().hi = hi;
            } else {
                segments.push_back({shard, lo, hi});
            }
            pos = stop;
        }
        prev_end = r.end();
        first = false;
    }

    // Announce every region of this call before touching any of them, so the
    // kernel can queue the reads together.
    std::uint64_t rows = 0;
    std::uint64_t nnz = 0;
    for (const auto& seg : segments) {
        const auto& s = impl_->shards[seg.shard];
        const auto& h = s.header;
        rows += seg.hi - seg.lo;
        s.advise(h.labels_offset + seg.lo * 2, (seg.hi - seg.lo) * 2, MADV_WILLNEED);
        if (options.matrix) {
            s.advise(h.indptr_offset + seg.lo * 8, (seg.hi - seg.lo + 1) * 8, MADV_WILLNEED);
        }
    }
    if (options.matrix) {
        for (const auto& seg : segments) {
            const auto& s = impl_->shards[seg.shard];
            const auto* ip = s.indptr();
            const std::uint64_t a = ip[seg.lo];
            const std::uint64_t b = ip[seg.hi];
            if (b < a) throw StoreError(s.path, s.header.indptr_offset + seg.lo * 8, "corrupt shard: indptr decreases");
            nnz += b - a;
            s.prefetch(s.header.indices_offset + a * 4, (b - a) * 4);
            s.prefetch(s.header.values_offset + a * 4, (b - a) * 4);
        }
    }

    RowBatch out;
    out.labels.reserve(rows);
    out.plates.reserve(rows);
    out.rows.n_cols = impl_->manifest.n_cols;
    if (options.matrix) {
        out.rows.indptr.reserve(rows + 1);
        out.rows.indices.resize(nnz);
        out.rows.values.resize(nnz);
    }

    std::uint64_t filled = 0;
    for (const auto& seg : segments) {
        const auto& s = impl_->shards[seg.shard];
        const std::uint64_t len = seg.hi - seg.lo;
        const auto* lab = s.labels() + seg.lo;
        out.labels.insert(out.labels.end(), lab, lab + len);
        out.plates.insert(out.plates.end(), len, static_cast<std::uint16_t>(seg.shard));
        std::uint64_t bytes = len * 2;
        if (options.matrix) {
            const auto* ip = s.indptr();
            const std::uint64_t a = ip[seg.lo];
            const std::uint64_t b = ip[seg.hi];
            s.populate(s.header.indices_offset + a * 4, (b - a) * 4);
            s.populate(s.header.values_offset + a * 4, (b - a) * 4);
            for (std::uint64_t r = seg.lo; r < seg.hi; ++r) out.rows.indptr.push_back(filled + ip[r + 1] - a);
            std::memcpy(out.rows.indices.data() + filled, s.indices() + a, (b - a) * 4);
            std::memcpy(out.rows.values.data() + filled, s.values() + a, (b - a) * 4);
            s.release(s.header.indices_offset + a * 4, (b - a) * 4);
            s.release(s.header.values_offset + a * 4, (b - a) * 4);
            filled += b - a;
            bytes += (len + 1) * 8 + (b - a) * 8;
        }
        impl_->per_shard[seg.shard].add(1, bytes, len);
        impl_->totals.add(1, bytes, len);
    }
    return out;
}

IoCounters ChunkedStore::io_counters() const noexcept { return impl_->totals.load(); }

std::vector<IoCounters> ChunkedStore::shard_counters() const {
    std::vector<IoCounters> out;
    for (std::size_t i = 0; i < impl_->shards.size(); ++i) out.push_back(impl_->per_shard[i].load());
    return out;
}

void ChunkedStore::drop_page_cache() const {
    for (const auto& s : impl_->shards) {
        ::madvise(s.base, s.size, MADV_DONTNEED);
        ::posix_fadvise(s.fd, 0, 0, POSIX_FADV_DONTNEED);
        s.advise(0, s.size, MADV_RANDOM);
    }
}

std::uint64_t ChunkedStore::bytes_on_disk() const noexcept {
    std::uint64_t total = 0;
    for (const auto& s : impl_->shards) total += s.size;
    return total;
}

}  // namespace blockfetch
