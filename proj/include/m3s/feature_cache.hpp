#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "m3s/attention.hpp"

namespace m3s {

// Row-major float32 matrix: the storage precision of cached features.
struct FloatMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    static FloatMatrix from(const Matrix& m);
    Matrix to_matrix() const;
    bool operator==(const FloatMatrix&) const = default;
};

struct CacheEntry {
    FloatMatrix k;
    FloatMatrix v;
    std::optional<FloatMatrix> q;

    bool operator==(const CacheEntry&) const = default;
};

// Reference K/V features keyed by (layer_id, timestep); each key holds one
// entry per reference, indexed by the reference's slot.
class FeatureCache {
public:
    using Key = std::pair<int, int>;

    void put(int layer_id, int timestep, int ref_index, CacheEntry entry);
    const CacheEntry* find(int layer_id, int timestep, int ref_index) const;
    // All references for (layer, timestep) converted for attention; throws on a miss.
    std::vector<ReferenceFeatures> references(int layer_id, int timestep) const;

    bool contains(int layer_id, int timestep) const;
    std::size_t entry_count() const;
    int reference_count() const;
    std::vector<int> layer_ids() const;
    std::vector<int> timesteps() const;
    const std::map<Key, std::vector<std::optional<CacheEntry>>>& entries() const { return entries_; }

    bool operator==(const FeatureCache&) const = default;

private:
    std::map<Key, std::vector<std::optional<CacheEntry>>> entries_;
};

// Binary container: "M3SFC1", u32 entry count, per-entry i32 header
// (layer_id, timestep, ref_index, rows, cols), then each entry's K and V as
// little-endian float32, in header order. Queries are not serialized.
void write_feature_cache(std::ostream& os, const FeatureCache& cache);
FeatureCache read_feature_cache(std::istream& is);
void save_feature_cache(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache load_feature_cache(const std::filesystem::path& path);

}  // namespace m3s
