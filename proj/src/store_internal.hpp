#ifndef BLOCKFETCH_STORE_INTERNAL_HPP
#define BLOCKFETCH_STORE_INTERNAL_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>

#include "blockfetch/store.hpp"

namespace blockfetch::detail {

std::uint32_t crc32_bytes(const void* data, std::size_t size);
std::uint64_t align_up(std::uint64_t v);
std::array<std::uint8_t, kShardHeaderSize> encode_header(const ShardHeader& h);
ShardHeader layout_for(std::uint64_t n_rows, std::uint64_t n_cols, std::uint64_t nnz, std::uint16_t label_count);
void check_invariants(const ShardHeader& h, std::span<const std::uint64_t> indptr, std::span<const std::uint32_t> cols,
                      std::span<const std::uint16_t> labels, const std::filesystem::path& path);

}  // namespace blockfetch::detail

#endif  // BLOCKFETCH_STORE_INTERNAL_HPP
