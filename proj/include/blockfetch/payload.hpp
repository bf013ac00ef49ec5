#ifndef BLOCKFETCH_PAYLOAD_HPP
#define BLOCKFETCH_PAYLOAD_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace blockfetch {

/// Contiguous run of global rows [start, start + len).
struct RowRange {
    std::uint64_t start = 0;
    std::uint64_t len = 0;

    std::uint64_t end() const noexcept { return start + len; }
    bool operator==(const RowRange&) const = default;
};

/// Collapses sorted indices into maximal runs of consecutive values.
/// Duplicates must already be removed.
std::vector<RowRange> coalesce(std::span<const std::uint64_t> sorted_unique);

/// CSR rows. indptr has rows()+1 entries and starts at 0.
struct SparseRows {
    std::uint64_t n_cols = 0;
    std::vector<std::uint64_t> indptr{0};
    std::vector<std::uint32_t> indices;
    std::vector<float> values;

    std::size_t rows() const noexcept { return indptr.size() - 1; }
    std::size_t nnz() const noexcept { return indices.size(); }

    void append_row(std::span<const std::uint32_t> cols, std::span<const float> vals);
    SparseRows take(std::span<const std::size_t> positions) const;
    bool operator==(const SparseRows&) const = default;
};

/// Row-major dense matrix.
struct DenseRows {
    std::uint64_t n_cols = 0;
    std::vector<float> data;

    std::size_t rows() const noexcept { return n_cols == 0 ? 0 : data.size() / n_cols; }
    std::span<const float> row(std::size_t r) const noexcept {
        return {data.data() + r * n_cols, static_cast<std::size_t>(n_cols)};
    }
    DenseRows take(std::span<const std::size_t> positions) const;
    bool operator==(const DenseRows&) const = default;
};

DenseRows to_dense(const SparseRows& sparse);

using LabelColumn = std::vector<std::uint32_t>;
using IndexColumn = std::vector<std::uint64_t>;

using Column = std::variant<SparseRows, DenseRows, LabelColumn, IndexColumn>;

std::size_t column_length(const Column& column);

class PayloadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Named columns sharing one leading dimension. Indexing with a list of
 * positions slices every column the same way, so parts stay aligned.
 */
class MultiPayload {
public:
    MultiPayload() = default;

    /// Adds a column. The first column fixes the length; later columns must
    /// match it. Names are unique.
    MultiPayload& add(std::string name, Column column);

    std::size_t size() const noexcept { return size_; }
    bool empty() const noexcept { return parts_.empty(); }
    bool contains(std::string_view name) const noexcept;
    std::vector<std::string> names() const;

    const Column& at(std::string_view name) const;
    Column& at(std::string_view name);

    template <class T>
    const T& get(std::string_view name) const {
        const auto* p = std::get_if<T>(&at(name));
        if (p == nullptr) throw PayloadError("payload column '" + std::string(name) + "' has a different type");
        return *p;
    }

    template <class T>
    T& get(std::string_view name) {
        auto* p = std::get_if<T>(&at(name));
        if (p == nullptr) throw PayloadError("payload column '" + std::string(name) + "' has a different type");
        return *p;
    }

    /// Rows at `positions`, in that order, from every column.
    MultiPayload take(std::span<const std::size_t> positions) const;

    /// Row-wise concatenation. All inputs must have the same column names
    /// and types.
    static MultiPayload concat(std::span<const MultiPayload> parts);

private:
    std::vector<std::pair<std::string, Column>> parts_;
    std::size_t size_ = 0;
};

}  // namespace blockfetch

#endif  // BLOCKFETCH_PAYLOAD_HPP
