#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "m3s/feature_cache.hpp"
#include "test_support.hpp"

using namespace m3s;
using m3s::testing::random_matrix;

namespace {

FeatureCache sample_cache(std::mt19937_64& rng, bool with_q = false) {
    FeatureCache c;
    for (int layer : {0, 3})
        for (int t : {999, 499, 0})
            for (int r = 0; r < 2; ++r) {
                CacheEntry e{FloatMatrix::from(random_matrix(6, 4, rng)), FloatMatrix::from(random_matrix(6, 4, rng)),
                             std::nullopt};
                if (with_q) e.q = FloatMatrix::from(random_matrix(6, 4, rng));
                c.put(layer, t, r, e);
            }
    return c;
}

std::string serialize(const FeatureCache& c) {
    std::ostringstream os(std::ios::binary);
    write_feature_cache(os, c);
    return os.str();
}

}  // namespace

TEST_CASE("FloatMatrix round trip through float32") {
    std::mt19937_64 rng(1);
    const Matrix m = random_matrix(3, 5, rng);
    const FloatMatrix f = FloatMatrix::from(m);
    CHECK(f.rows == 3);
    CHECK(f.cols == 5);
    const Matrix back = f.to_matrix();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) CHECK(back(r, c) == static_cast<double>(static_cast<float>(m(r, c))));
}

TEST_CASE("FeatureCache bookkeeping") {
    std::mt19937_64 rng(2);
    const FeatureCache c = sample_cache(rng);
    CHECK(c.entry_count() == 12);
    CHECK(c.reference_count() == 2);
    CHECK(c.layer_ids() == std::vector<int>{0, 3});
    CHECK(c.timesteps() == std::vector<int>{999, 499, 0});
    CHECK(c.contains(3, 499));
    CHECK_FALSE(c.contains(3, 500));
    CHECK(c.find(0, 0, 1) != nullptr);
    CHECK(c.find(0, 0, 2) == nullptr);
    CHECK(c.references(0, 999).size() == 2);
    CHECK_THROWS(c.references(1, 999));
}

TEST_CASE("feature cache serialization round trips bitwise") {
    std::mt19937_64 rng(3);
    const FeatureCache c = sample_cache(rng);
    const std::string bytes = serialize(c);
    CHECK(bytes.substr(0, 6) == "M3SFC1");
    std::istringstream is(bytes, std::ios::binary);
    const FeatureCache back = read_feature_cache(is);
    CHECK(back == c);
    CHECK(serialize(back) == bytes);
    // magic + count + 12 headers of five i32 + 12 entries of two 6x4 float32 blocks
    CHECK(bytes.size() == 6 + 4 + 12 * 20 + 12 * 2 * 24 * 4);
}

TEST_CASE("feature cache files drop queries") {
    std::mt19937_64 rng(4);
    const FeatureCache c = sample_cache(rng, true);
    const auto path = std::filesystem::temp_directory_path() / "m3s_test_cache.m3sfc";
    save_feature_cache(path, c);
    const FeatureCache back = load_feature_cache(path);
    std::filesystem::remove(path);
    CHECK(back.entry_count() == c.entry_count());
    for (const auto& [key, slots] : back.entries()) {
        for (std::size_t r = 0; r < slots.size(); ++r) {
            const CacheEntry& orig = *c.entries().at(key)[r];
            CHECK(slots[r]->k == orig.k);
            CHECK(slots[r]->v == orig.v);
            CHECK_FALSE(slots[r]->q.has_value());
        }
    }
}

TEST_CASE("feature cache rejects malformed input") {
    std::mt19937_64 rng(5);
    const std::string good = serialize(sample_cache(rng));
    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS(read_feature_cache(is));
    }
    SUBCASE("truncated") {
        std::istringstream is(good.substr(0, good.size() - 3), std::ios::binary);
        CHECK_THROWS(read_feature_cache(is));
    }
    SUBCASE("empty") {
        std::istringstream is(std::string{}, std::ios::binary);
        CHECK_THROWS(read_feature_cache(is));
    }
    SUBCASE("missing file") { CHECK_THROWS(load_feature_cache("/nonexistent/dir/cache.m3sfc")); }
}

TEST_CASE("an empty cache round trips") {
    const FeatureCache empty;
    std::istringstream is(serialize(empty), std::ios::binary);
    CHECK(read_feature_cache(is).entry_count() == 0);
}
