#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "blockfetch/rng.hpp"
#include "blockfetch/store.hpp"

namespace blockfetch {

namespace {

void check_spec(const SynthSpec& spec) {
    auto fail = [&](const std::string& what) { throw StoreError(spec.directory, std::nullopt, "synthetic spec: " + what); };
    if (spec.n_rows == 0) fail("n_rows must be >= 1");
    if (spec.n_cols == 0 || spec.n_cols > 0xFFFFFFFFULL) fail("n_cols must be in [1, 2^32)");
    if (spec.shards == 0) fail("shards must be >= 1");
    if (spec.shards > spec.n_rows) fail("more shards than rows");
    if (!(spec.density > 0.0 && spec.density <= 1.0)) fail("density must be in (0, 1]");
    if (spec.shard_alignment == 0) fail("shard_alignment must be >= 1");
    if (!spec.plate_proportions.empty()) {
        if (spec.plate_proportions.size() != spec.shards) fail("plate_proportions must have one entry per shard");
        for (double p : spec.plate_proportions)
            if (!(p > 0.0) || !std::isfinite(p)) fail("plate_proportions must be positive");
    }
    if (const auto* c = std::get_if<ClusteredLabels>(&spec.labels)) {
        if (c->classes == 0 || c->classes > 0xFFFF) fail("classes must be in [1, 65535]");
        if (c->groups > c->classes) fail("more groups than classes");
    } else if (spec.shards > 0xFFFF) {
        fail("plate labels support at most 65535 shards");
    }
}

std::uint32_t label_count(const SynthSpec& spec) {
    if (const auto* c = std::get_if<ClusteredLabels>(&spec.labels)) return c->classes;
    return spec.shards;
}

// Rows before the held-out shard, over which clustered classes are laid out.
std::uint64_t clustered_span(const std::vector<std::uint64_t>& sizes, const ClusteredLabels& c) {
    const std::uint64_t total = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0});
    if (c.mixed_last_shard && sizes.size() > 1) return total - sizes.back();
    return total;
}

std::vector<float> gaussian_table(std::uint64_t seed, std::string_view tag, std::size_t rows, std::size_t cols,
                                  double scale) {
    std::vector<float> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        Xoshiro256 rng(derive_seed(seed, tag, r));
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<float>(scale * rng.normal());
    }
    return out;
}

}  // namespace

std::vector<std::uint64_t> shard_sizes(const SynthSpec& spec) {
    check_spec(spec);
    std::vector<double> props = spec.plate_proportions;
    if (props.empty()) props.assign(spec.shards, 1.0);
    const double sum = std::accumulate(props.begin(), props.end(), 0.0);

    // Largest remainder in units of `shard_alignment` rows; the tail remainder
    // (n_rows mod alignment) goes to the last shard.
    std::uint64_t align = spec.shard_alignment;
    if (spec.n_rows / align < spec.shards) align = 1;
    const std::uint64_t units = spec.n_rows / align;
    std::vector<std::uint64_t> sizes(props.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const double exact = static_cast<double>(units) * props[i] / sum;
        sizes[i] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(exact)));
        assigned += sizes[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < units; k = (k + 1) % remainders.size(), ++assigned) ++sizes[remainders[k].second];
    while (assigned > units) {
        auto it = std::max_element(sizes.begin(), sizes.end());
        --*it;
        --assigned;
    }
    for (auto& s : sizes) s *= align;
    sizes.back() += spec.n_rows - units * align;
    return sizes;
}

ShardData synthesize_shard(const SynthSpec& spec, std::uint32_t index) {
    const auto sizes = shard_sizes(spec);
    const std::uint64_t offset = std::accumulate(sizes.begin(), sizes.begin() + index, std::uint64_t{0});
    const std::uint64_t rows = sizes[index];
    const std::uint32_t n_labels = label_count(spec);
    const std::size_t n_cols = spec.n_cols;

    ShardData data;
    data.label_count = static_cast<std::uint16_t>(n_labels);
    data.rows.n_cols = spec.n_cols;
    data.labels.resize(rows);

    // Labels.
    Xoshiro256 label_rng(derive_seed(spec.seed, "labels", index));
    if (const auto* c = std::get_if<ClusteredLabels>(&spec.labels)) {
        const std::uint64_t span = clustered_span(sizes, *c);
        const bool held_out = c->mixed_last_shard && sizes.size() > 1 && index + 1 == sizes.size();
        for (std::uint64_t r = 0; r < rows; ++r) {
            const std::uint64_t g = offset + r;
            const std::uint64_t cls =
                held_out ? label_rng.below(c->classes)
                         : static_cast<std::uint64_t>((static_cast<__uint128_t>(g) * c->classes) / span);
            data.labels[r] = static_cast<std::uint16_t>(cls);
        }
    } else {
        std::fill(data.labels.begin(), data.labels.end(), static_cast<std::uint16_t>(index));
    }

    // Values: class means + plate offset + noise, or uniform.
    std::vector<float> class_means;
    std::vector<float> plate_offset;
    if (spec.signal) {
        class_means = gaussian_table(spec.seed, "class-mean", n_labels, n_cols, spec.signal->class_scale);
        plate_offset = gaussian_table(derive_seed(spec.seed, "plate", index), "plate-offset", 1, n_cols,
                                      spec.signal->plate_scale);
    }

    // Column pattern: gaps uniform on [1, G] with G = 2/density - 1, so the
    // mean gap is 1/density and density 1 gives dense rows.
    const auto max_gap = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(2.0 / spec.density - 1.0)));
    const double expected_nnz = static_cast<double>(rows) * std::min<double>(n_cols, n_cols * spec.density + 1);
    data.rows.indptr.reserve(rows + 1);
    data.rows.indices.reserve(static_cast<std::size_t>(expected_nnz));
    data.rows.values.reserve(static_cast<std::size_t>(expected_nnz));

    Xoshiro256 rng(derive_seed(spec.seed, "values", index));
    for (std::uint64_t r = 0; r < rows; ++r) {
        const std::uint16_t label = data.labels[r];
        std::uint64_t col = rng.below(max_gap);
        while (col < n_cols) {
            float v;
            if (spec.signal) {
                v = class_means[label * n_cols + col] + plate_offset[col] +
                    static_cast<float>(spec.signal->noise * rng.normal());
            } else {
                v = static_cast<float>(rng.uniform_open0());
            }
            data.rows.indices.push_back(static_cast<std::uint32_t>(col));
            data.rows.values.push_back(v);
            col += 1 + rng.below(max_gap);
        }
        data.rows.indptr.push_back(data.rows.indices.size());
    }
    return data;
}

Manifest generate_synthetic(const SynthSpec& spec) {
    const auto sizes = shard_sizes(spec);
    std::error_code ec;
    std::filesystem::create_directories(spec.directory, ec);
    if (ec) throw StoreError(spec.directory, std::nullopt, "create directory: " + ec.message());

    Manifest m;
    m.directory = spec.directory;
    m.n_cols = spec.n_cols;
    if (const auto* c = std::get_if<ClusteredLabels>(&spec.labels)) {
        for (std::uint32_t k = 0; k < c->classes; ++k) m.labels.push_back("class_" + std::to_string(k));
        if (c->groups > 0) {
            for (std::uint32_t g = 0; g < c->groups; ++g) m.groups.push_back("group_" + std::to_string(g));
            for (std::uint32_t k = 0; k < c->classes; ++k)
                m.label_groups.push_back(static_cast<std::uint32_t>(std::uint64_t{k} * c->groups / c->classes));
        }
    } else {
        for (std::uint32_t k = 0; k < spec.shards; ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "plate_%02u", k);
            m.labels.emplace_back(name);
        }
    }

    for (std::uint32_t i = 0; i < spec.shards; ++i) {
        char file[32];
        char plate[32];
        std::snprintf(file, sizeof file, "shard_%03u.bfs", i);
        std::snprintf(plate, sizeof plate, "plate_%02u", i);
        write_shard(spec.directory / file, synthesize_shard(spec, i));
        m.shards.push_back({file, sizes[i], plate});
    }
    m.save(spec.directory / kManifestFileName);
    return m;
}

}  // namespace blockfetch
