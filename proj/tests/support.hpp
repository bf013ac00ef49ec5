#ifndef BLOCKFETCH_TESTS_SUPPORT_HPP
#define BLOCKFETCH_TESTS_SUPPORT_HPP

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <numeric>
#include <string>

#include "blockfetch/payload.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("blockfetch-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Payload with an "id" column equal to the row index and a "label" column
// equal to (row / label_run) % label_mod.
inline blockfetch::MultiPayload sentinel_payload(std::uint64_t n, std::uint32_t label_run = 1,
                                                 std::uint32_t label_mod = 1u << 30) {
    blockfetch::IndexColumn ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    blockfetch::LabelColumn labels(n);
    for (std::uint64_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>((i / label_run) % label_mod);
    blockfetch::MultiPayload p;
    p.add("id", std::move(ids));
    p.add("label", std::move(labels));
    return p;
}

}  // namespace testing

#endif
