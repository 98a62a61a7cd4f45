#include "m3s/feature_cache.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include "m3s/error.hpp"

namespace m3s {

namespace {

constexpr std::array<char, 6> kMagic{'M', '3', 'S', 'F', 'C', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(sizeof(T) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    const std::array<char, 4> b{static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                static_cast<char>((bits >> 16) & 0xff),
                                static_cast<char>((bits >> 24) & 0xff)};
    os.write(b.data(), 4);
}

template <typename T>
T get_le(std::istream& is) {
    static_assert(sizeof(T) == 4);
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw std::runtime_error("feature cache: unexpected end of file");
    }
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    T value;
    std::memcpy(&value, &bits, 4);
    return value;
}

}  // namespace

FloatMatrix FloatMatrix::from(const Matrix& m) {
    FloatMatrix out{static_cast<int>(m.rows()), static_cast<int>(m.cols()), {}};
    out.data.resize(static_cast<std::size_t>(m.rows() * m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out.data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    return out;
}

Matrix FloatMatrix::to_matrix() const {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r) * cols + c];
    return m;
}

void FeatureCache::put(int layer_id, int timestep, int ref_index, CacheEntry entry) {
    if (ref_index < 0) throw ValidationError("ref_index", "must be >= 0");
    auto& slots = entries_[{layer_id, timestep}];
    if (slots.size() <= static_cast<std::size_t>(ref_index)) slots.resize(static_cast<std::size_t>(ref_index) + 1);
    slots[static_cast<std::size_t>(ref_index)] = std::move(entry);
}

const CacheEntry* FeatureCache::find(int layer_id, int timestep, int ref_index) const {
    const auto it = entries_.find({layer_id, timestep});
    if (it == entries_.end() || ref_index < 0 || static_cast<std::size_t>(ref_index) >= it->second.size()) {
        return nullptr;
    }
    const auto& slot = it->second[static_cast<std::size_t>(ref_index)];
    return slot ? &*slot : nullptr;
}

std::vector<ReferenceFeatures> FeatureCache::references(int layer_id, int timestep) const {
    const auto it = entries_.find({layer_id, timestep});
    if (it == entries_.end()) {
        throw std::runtime_error("feature cache miss at layer " + std::to_string(layer_id) + ", timestep " +
                                 std::to_string(timestep));
    }
    std::vector<ReferenceFeatures> out;
    out.reserve(it->second.size());
    for (std::size_t i = 0; i < it->second.size(); ++i) {
        const auto& slot = it->second[i];
        if (!slot) {
            throw std::runtime_error("feature cache miss at layer " + std::to_string(layer_id) + ", timestep " +
                                     std::to_string(timestep) + ", reference " + std::to_string(i));
        }
        ReferenceFeatures f{slot->k.to_matrix(), slot->v.to_matrix(), std::nullopt};
        if (slot->q) f.q = slot->q->to_matrix();
        out.push_back(std::move(f));
    }
    return out;
}

bool FeatureCache::contains(int layer_id, int timestep) const {
    return entries_.contains({layer_id, timestep});
}

std::size_t FeatureCache::entry_count() const {
    std::size_t n = 0;
    for (const auto& [key, slots] : entries_)
        for (const auto& s : slots) n += s ? 1 : 0;
    return n;
}

int FeatureCache::reference_count() const {
    std::size_t n = 0;
    for (const auto& [key, slots] : entries_) n = std::max(n, slots.size());
    return static_cast<int>(n);
}

std::vector<int> FeatureCache::layer_ids() const {
    std::set<int> ids;
    for (const auto& [key, slots] : entries_) ids.insert(key.first);
    return {ids.begin(), ids.end()};
}

std::vector<int> FeatureCache::timesteps() const {
    std::set<int, std::greater<>> ts;
    for (const auto& [key, slots] : entries_) ts.insert(key.second);
    return {ts.begin(), ts.end()};
}

void write_feature_cache(std::ostream& os, const FeatureCache& cache) {
    struct Item {
        int layer, timestep, ref;
        const CacheEntry* entry;
    };
    std::vector<Item> items;
    for (const auto& [key, slots] : cache.entries()) {
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (!slots[i]) continue;
            const CacheEntry& e = *slots[i];
            if (e.k.rows != e.v.rows || e.k.cols != e.v.cols) {
                throw ValidationError("feature cache", "K and V shapes differ; the container stores one shape per entry");
            }
            items.push_back({key.first, key.second, static_cast<int>(i), &e});
        }
    }
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(items.size()));
    for (const Item& it : items) {
        put_le<std::int32_t>(os, it.layer);
        put_le<std::int32_t>(os, it.timestep);
        put_le<std::int32_t>(os, it.ref);
        put_le<std::int32_t>(os, it.entry->k.rows);
        put_le<std::int32_t>(os, it.entry->k.cols);
    }
    for (const Item& it : items) {
        for (float f : it.entry->k.data) put_le<float>(os, f);
        for (float f : it.entry->v.data) put_le<float>(os, f);
    }
    if (!os) throw std::runtime_error("feature cache: write failed");
}

FeatureCache read_feature_cache(std::istream& is) {
    std::array<char, 6> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw std::runtime_error("feature cache: bad magic (expected M3SFC1)");
    }
    const auto count = get_le<std::uint32_t>(is);
    struct Header {
        std::int32_t layer, timestep, ref, rows, cols;
    };
    std::vector<Header> headers(count);
    for (Header& h : headers) {
        h.layer = get_le<std::int32_t>(is);
        h.timestep = get_le<std::int32_t>(is);
        h.ref = get_le<std::int32_t>(is);
        h.rows = get_le<std::int32_t>(is);
        h.cols = get_le<std::int32_t>(is);
        if (h.rows < 0 || h.cols < 0 || h.ref < 0) throw std::runtime_error("feature cache: corrupt entry header");
    }
    FeatureCache cache;
    for (const Header& h : headers) {
        CacheEntry e;
        const std::size_t n = static_cast<std::size_t>(h.rows) * static_cast<std::size_t>(h.cols);
        e.k = {h.rows, h.cols, std::vector<float>(n)};
        e.v = {h.rows, h.cols, std::vector<float>(n)};
        for (float& f : e.k.data) f = get_le<float>(is);
        for (float& f : e.v.data) f = get_le<float>(is);
        cache.put(h.layer, h.timestep, h.ref, std::move(e));
    }
    return cache;
}

void save_feature_cache(const std::filesystem::path& path, const FeatureCache& cache) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_feature_cache(os, cache);
}

FeatureCache load_feature_cache(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_feature_cache(is);
}

}  // namespace m3s
