#include "blockfetch/payload.hpp"

#include <algorithm>

namespace blockfetch {

std::vector<RowRange> coalesce(std::span<const std::uint64_t> sorted_unique) {
    std::vector<RowRange> ranges;
    for (std::uint64_t idx : sorted_unique) {
        if (!ranges.empty() && ranges.back().end() == idx) {
            ++ranges.back().len;
        } else {
            ranges.push_back({idx, 1});
        }
    }
    return ranges;
}

void SparseRows::append_row(std::span<const std::uint32_t> cols, std::span<const float> vals) {
    indices.insert(indices.end(), cols.begin(), cols.end());
    values.insert(values.end(), vals.begin(), vals.end());
    indptr.push_back(indices.size());
}

SparseRows SparseRows::take(std::span<const std::size_t> positions) const {
    SparseRows out;
    out.n_cols = n_cols;
    out.indptr.reserve(positions.size() + 1);
    std::size_t total = 0;
    for (auto p : positions) total += indptr[p + 1] - indptr[p];
    out.indices.reserve(total);
    out.values.reserve(total);
    for (auto p : positions) {
        const auto lo = static_cast<std::ptrdiff_t>(indptr[p]);
        const auto hi = static_cast<std::ptrdiff_t>(indptr[p + 1]);
        out.indices.insert(out.indices.end(), indices.begin() + lo, indices.begin() + hi);
        out.values.insert(out.values.end(), values.begin() + lo, values.begin() + hi);
        out.indptr.push_back(out.indices.size());
    }
    return out;
}

DenseRows DenseRows::take(std::span<const std::size_t> positions) const {
    DenseRows out;
    out.n_cols = n_cols;
    out.data.resize(positions.size() * n_cols);
    auto dst = out.data.begin();
    for (auto p : positions) {
        auto src = data.begin() + static_cast<std::ptrdiff_t>(p * n_cols);
        dst = std::copy(src, src + static_cast<std::ptrdiff_t>(n_cols), dst);
    }
    return out;
}

DenseRows to_dense(const SparseRows& sparse) {
    DenseRows dense;
    dense.n_cols = sparse.n_cols;
    dense.data.assign(sparse.rows() * sparse.n_cols, 0.0f);
    for (std::size_t r = 0; r < sparse.rows(); ++r) {
        float* row = dense.data.data() + r * sparse.n_cols;
        for (auto k = sparse.indptr[r]; k < sparse.indptr[r + 1]; ++k) row[sparse.indices[k]] = sparse.values[k];
    }
    return dense;
}

std::size_t column_length(const Column& column) {
    return std::visit(
        [](const auto& c) -> std::size_t {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SparseRows> || std::is_same_v<T, DenseRows>) {
                return c.rows();
            } else {
                return c.size();
            }
        },
        column);
}

namespace {

Column take_column(const Column& column, std::span<const std::size_t> positions) {
    return std::visit(
        [&](const auto& c) -> Column {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SparseRows> || std::is_same_v<T, DenseRows>) {
                return c.take(positions);
            } else {
                T out;
                out.reserve(positions.size());
                for (auto p : positions) out.push_back(c[p]);
                return out;
            }
        },
        column);
}

void append_column(Column& dst, const Column& src) {
    std::visit(
        [&](auto& d) {
            using T = std::decay_t<decltype(d)>;
            const auto* s = std::get_if<T>(&src);
            if (s == nullptr) throw PayloadError("concat: column types differ");
            if constexpr (std::is_same_v<T, SparseRows>) {
                if (d.n_cols != s->n_cols) throw PayloadError("concat: sparse widths differ");
                const auto base = d.indices.size();
                d.indices.insert(d.indices.end(), s->indices.begin(), s->indices.end());
                d.values.insert(d.values.end(), s->values.begin(), s->values.end());
                for (std::size_t r = 1; r < s->indptr.size(); ++r) d.indptr.push_back(base + s->indptr[r]);
            } else if constexpr (std::is_same_v<T, DenseRows>) {
                if (d.n_cols != s->n_cols) throw PayloadError("concat: dense widths differ");
                d.data.insert(d.data.end(), s->data.begin(), s->data.end());
            } else {
                d.insert(d.end(), s->begin(), s->end());
            }
        },
        dst);
}

}  // namespace

MultiPayload& MultiPayload::add(std::string name, Column column) {
    if (contains(name)) throw PayloadError("payload already has a column named '" + name + "'");
    const std::size_t len = column_length(column);
    if (!parts_.empty() && len != size_) {
        throw PayloadError("payload column '" + name + "' has length " + std::to_string(len) + ", expected " +
                           std::to_string(size_));
    }
    size_ = len;
    parts_.emplace_back(std::move(name), std::move(column));
    return *this;
}

bool MultiPayload::contains(std::string_view name) const noexcept {
    return std::any_of(parts_.begin(), parts_.end(), [&](const auto& p) { return p.first == name; });
}

std::vector<std::string> MultiPayload::names() const {
    std::vector<std::string> out;
    out.reserve(parts_.size());
    for (const auto& p : parts_) out.push_back(p.first);
    return out;
}

const Column& MultiPayload::at(std::string_view name) const {
    for (const auto& p : parts_)
        if (p.first == name) return p.second;
    throw PayloadError("payload has no column named '" + std::string(name) + "'");
}

Column& MultiPayload::at(std::string_view name) {
    for (auto& p : parts_)
        if (p.first == name) return p.second;
    throw PayloadError("payload has no column named '" + std::string(name) + "'");
}

MultiPayload MultiPayload::take(std::span<const std::size_t> positions) const {
    for (auto p : positions)
        if (p >= size_) throw PayloadError("payload position " + std::to_string(p) + " out of range");
    MultiPayload out;
    for (const auto& [name, column] : parts_) out.add(name, take_column(column, positions));
    out.size_ = positions.size();
    return out;
}

MultiPayload MultiPayload::concat(std::span<const MultiPayload> parts) {
    if (parts.empty()) return {};
    MultiPayload out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto& next = parts[i];
        if (next.parts_.size() != out.parts_.size()) throw PayloadError("concat: column sets differ");
        for (std::size_t c = 0; c < out.parts_.size(); ++c) {
            if (out.parts_[c].first != next.parts_[c].first) throw PayloadError("concat: column names differ");
            append_column(out.parts_[c].second, next.parts_[c].second);
        }
        out.size_ += next.size_;
    }
    return out;
}

}  // namespace blockfetch
