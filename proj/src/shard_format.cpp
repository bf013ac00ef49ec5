#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "blockfetch/store.hpp"
#include "store_internal.hpp"

namespace blockfetch {

StoreError::StoreError(const std::filesystem::path& path, std::optional<std::uint64_t> offset,
                       const std::string& what)
    : std::runtime_error(path.string() + (offset ? " @" + std::to_string(*offset) : std::string()) + ": " + what),
      path_(path),
      offset_(offset) {}

namespace detail {

std::uint32_t crc32_bytes(const void* data, std::size_t size) {
    return static_cast<std::uint32_t>(::crc32_z(0L, static_cast<const Bytef*>(data), size));
}

std::uint64_t align_up(std::uint64_t v) {
    return (v + kSectionAlignment - 1) / kSectionAlignment * kSectionAlignment;
}

namespace {

template <class T>
void put(std::uint8_t* dst, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i));
}

template <class T>
T get(const std::uint8_t* src) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(src[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace

std::array<std::uint8_t, kShardHeaderSize> encode_header(const ShardHeader& h) {
    std::array<std::uint8_t, kShardHeaderSize> out{};
    std::memcpy(out.data(), kShardMagic.data(), kShardMagic.size());
    put<std::uint32_t>(out.data() + 8, h.version);
    put<std::uint16_t>(out.data() + 12, h.label_count);
    put<std::uint64_t>(out.data() + 16, h.n_rows);
    put<std::uint64_t>(out.data() + 24, h.n_cols);
    put<std::uint64_t>(out.data() + 32, h.nnz);
    put<std::uint64_t>(out.data() + 40, h.indptr_offset);
    put<std::uint64_t>(out.data() + 48, h.indices_offset);
    put<std::uint64_t>(out.data() + 56, h.values_offset);
    put<std::uint64_t>(out.data() + 64, h.labels_offset);
    for (std::size_t i = 0; i < 4; ++i) put<std::uint32_t>(out.data() + 72 + 4 * i, h.section_crc[i]);
    put<std::uint32_t>(out.data() + 88, crc32_bytes(out.data(), 88));
    return out;
}

ShardHeader layout_for(std::uint64_t n_rows, std::uint64_t n_cols, std::uint64_t nnz, std::uint16_t label_count) {
    ShardHeader h;
    h.label_count = label_count;
    h.n_rows = n_rows;
    h.n_cols = n_cols;
    h.nnz = nnz;
    h.indptr_offset = kShardHeaderSize;
    h.indices_offset = align_up(h.indptr_offset + (n_rows + 1) * 8);
    h.values_offset = align_up(h.indices_offset + nnz * 4);
    h.labels_offset = align_up(h.values_offset + nnz * 4);
    return h;
}

void check_invariants(const ShardHeader& h, std::span<const std::uint64_t> indptr, std::span<const std::uint32_t> cols,
                      std::span<const std::uint16_t> labels, const std::filesystem::path& path) {
    if (indptr.empty() || indptr[0] != 0) throw StoreError(path, h.indptr_offset, "corrupt shard: indptr[0] != 0");
    for (std::size_t r = 0; r + 1 < indptr.size(); ++r) {
        if (indptr[r + 1] < indptr[r])
            throw StoreError(path, h.indptr_offset + 8 * (r + 1), "corrupt shard: indptr decreases at row " + std::to_string(r));
    }
    if (indptr.back() != h.nnz) throw StoreError(path, h.indptr_offset + 8 * h.n_rows, "corrupt shard: indptr[n_rows] != nnz");
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] >= h.n_cols)
            throw StoreError(path, h.indices_offset + 4 * k, "corrupt shard: column index out of range");
    }
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] >= h.label_count)
            throw StoreError(path, h.labels_offset + 2 * r, "corrupt shard: row label out of range");
    }
}

}  // namespace detail

std::uint64_t ShardHeader::file_size() const noexcept { return labels_offset + n_rows * 2; }

ShardHeader parse_shard_header(std::span<const std::uint8_t> bytes, const std::filesystem::path& path) {
    using detail::get;
    if (bytes.size() < kShardHeaderSize) throw StoreError(path, 0, "truncated shard header");
    if (std::memcmp(bytes.data(), kShardMagic.data(), kShardMagic.size()) != 0)
        throw StoreError(path, 0, "bad magic: not a blockfetch shard");
    const auto stored_crc = get<std::uint32_t>(bytes.data() + 88);
    if (stored_crc != detail::crc32_bytes(bytes.data(), 88)) throw StoreError(path, 88, "corrupt shard: header checksum mismatch");

    ShardHeader h;
    h.version = get<std::uint32_t>(bytes.data() + 8);
    if (h.version != kShardVersion) throw StoreError(path, 8, "unsupported shard version " + std::to_string(h.version));
    h.label_count = get<std::uint16_t>(bytes.data() + 12);
    h.n_rows = get<std::uint64_t>(bytes.data() + 16);
    h.n_cols = get<std::uint64_t>(bytes.data() + 24);
    h.nnz = get<std::uint64_t>(bytes.data() + 32);
    h.indptr_offset = get<std::uint64_t>(bytes.data() + 40);
    h.indices_offset = get<std::uint64_t>(bytes.data() + 48);
    h.values_offset = get<std::uint64_t>(bytes.data() + 56);
    h.labels_offset = get<std::uint64_t>(bytes.data() + 64);
    for (std::size_t i = 0; i < 4; ++i) h.section_crc[i] = get<std::uint32_t>(bytes.data() + 72 + 4 * i);
    h.header_crc = stored_crc;

    const auto expect = detail::layout_for(h.n_rows, h.n_cols, h.nnz, h.label_count);
    if (h.indptr_offset != expect.indptr_offset || h.indices_offset != expect.indices_offset ||
        h.values_offset != expect.values_offset || h.labels_offset != expect.labels_offset)
        throw StoreError(path, 40, "corrupt shard: section offsets inconsistent with sizes");
    return h;
}

namespace {

class FdWriter {
public:
    explicit FdWriter(const std::filesystem::path& path) : path_(path) {
        fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd_ < 0) throw StoreError(path_, std::nullopt, std::string("open for writing: ") + std::strerror(errno));
    }
    FdWriter(const FdWriter&) = delete;
    FdWriter& operator=(const FdWriter&) = delete;
    ~FdWriter() {
        if (fd_ >= 0) ::close(fd_);
    }

    void write(const void* data, std::size_t size) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        while (size > 0) {
            const ssize_t n = ::write(fd_, p, std::min<std::size_t>(size, std::size_t{1} << 30));
            if (n < 0) {
                if (errno == EINTR) continue;
                throw StoreError(path_, offset_, std::string("write: ") + std::strerror(errno));
            }
            p += n;
            size -= static_cast<std::size_t>(n);
            offset_ += static_cast<std::uint64_t>(n);
        }
    }

    void pad_to(std::uint64_t target) {
        static constexpr std::uint8_t zeros[kSectionAlignment] = {};
        while (offset_ < target) write(zeros, std::min<std::uint64_t>(target - offset_, kSectionAlignment));
    }

    void pwrite_at(const void* data, std::size_t size, std::uint64_t at) {
        if (::pwrite(fd_, data, size, static_cast<off_t>(at)) != static_cast<ssize_t>(size))
            throw StoreError(path_, at, std::string("pwrite: ") + std::strerror(errno));
    }

    void sync_and_close() {
        if (::fsync(fd_) != 0) throw StoreError(path_, offset_, std::string("fsync: ") + std::strerror(errno));
        if (::close(fd_) != 0) {
            fd_ = -1;
            throw StoreError(path_, offset_, std::string("close: ") + std::strerror(errno));
        }
        fd_ = -1;
    }

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::uint64_t offset_ = 0;
};

static_assert(std::endian::native == std::endian::little, "shard sections are written as raw little-endian arrays");

}  // namespace

ShardHeader write_shard(const std::filesystem::path& path, const ShardData& data) {
    const auto& rows = data.rows;
    if (data.labels.size() != rows.rows())
        throw StoreError(path, std::nullopt, "label count does not match row count");
    auto h = detail::layout_for(rows.rows(), rows.n_cols, rows.nnz(), data.label_count);
    detail::check_invariants(h, rows.indptr, rows.indices, data.labels, path);

    h.section_crc[0] = detail::crc32_bytes(rows.indptr.data(), rows.indptr.size() * 8);
    h.section_crc[1] = detail::crc32_bytes(rows.indices.data(), rows.indices.size() * 4);
    h.section_crc[2] = detail::crc32_bytes(rows.values.data(), rows.values.size() * 4);
    h.section_crc[3] = detail::crc32_bytes(data.labels.data(), data.labels.size() * 2);

    FdWriter out(path);
    const auto header = detail::encode_header(h);
    out.write(header.data(), header.size());
    out.write(rows.indptr.data(), rows.indptr.size() * 8);
    out.pad_to(h.indices_offset);
    out.write(rows.indices.data(), rows.indices.size() * 4);
    out.pad_to(h.values_offset);
    out.write(rows.values.data(), rows.values.size() * 4);
    out.pad_to(h.labels_offset);
    out.write(data.labels.data(), data.labels.size() * 2);
    out.sync_and_close();
    h.header_crc = detail::crc32_bytes(header.data(), 88);
    return h;
}

ShardData load_shard(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError(path, std::nullopt, "cannot open shard");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto h = parse_shard_header(bytes, path);
    if (bytes.size() < h.file_size()) throw StoreError(path, bytes.size(), "truncated shard");

    ShardData data;
    data.label_count = h.label_count;
    data.rows.n_cols = h.n_cols;
    data.rows.indptr.resize(h.n_rows + 1);
    data.rows.indices.resize(h.nnz);
    data.rows.values.resize(h.nnz);
    data.labels.resize(h.n_rows);
    std::memcpy(data.rows.indptr.data(), bytes.data() + h.indptr_offset, data.rows.indptr.size() * 8);
    std::memcpy(data.rows.indices.data(), bytes.data() + h.indices_offset, h.nnz * 4);
    std::memcpy(data.rows.values.data(), bytes.data() + h.values_offset, h.nnz * 4);
    std::memcpy(data.labels.data(), bytes.data() + h.labels_offset, h.n_rows * 2);

    const std::uint32_t crcs[4] = {
        detail::crc32_bytes(bytes.data() + h.indptr_offset, (h.n_rows + 1) * 8),
        detail::crc32_bytes(bytes.data() + h.indices_offset, h.nnz * 4),
        detail::crc32_bytes(bytes.data() + h.values_offset, h.nnz * 4),
        detail::crc32_bytes(bytes.data() + h.labels_offset, h.n_rows * 2),
    };
    const std::uint64_t offsets[4] = {h.indptr_offset, h.indices_offset, h.values_offset, h.labels_offset};
    for (int i = 0; i < 4; ++i)
        if (crcs[i] != h.section_crc[i]) throw StoreError(path, offsets[i], "corrupt shard: section checksum mismatch");
    detail::check_invariants(h, data.rows.indptr, data.rows.indices, data.labels, path);
    return data;
}

}  // namespace blockfetch
