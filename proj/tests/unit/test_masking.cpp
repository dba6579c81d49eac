#include <set>
#include <sstream>

#include "franca/masking.hpp"
#include "helpers.hpp"

using namespace franca;

namespace {

std::set<std::pair<std::size_t, std::size_t>> visible(const MaskGrid& m) {
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            if (!m.at(r, c)) out.insert({r, c});
    return out;
}

}  // namespace

TEST_CASE("random mask counts") {
    Rng rng(1);
    CHECK(random_mask(4, 4, 0.0, rng).masked_count() == 0);
    CHECK(random_mask(4, 4, 1.0, rng).masked_count() == 16);
    CHECK(random_mask(4, 4, 0.5, rng).masked_count() == 8);
    for (int i = 0; i < 50; ++i) {
        const double ratio = rng.uniform();
        auto m = random_mask(5, 7, ratio, rng);
        CHECK(std::abs(m.mask_ratio() - ratio) <= 0.5 / 35.0 + 1e-12);
    }
    CHECK_THROWS(random_mask(4, 4, 1.5, rng));
}

TEST_CASE("inverse block mask placement") {
    CHECK(inverse_block_mask(4, 4, 0.0).masked_count() == 0);
    auto m = inverse_block_mask(4, 4, 0.75);
    CHECK(visible(m) == std::set<std::pair<std::size_t, std::size_t>>{{1, 1}, {1, 2}, {2, 1}, {2, 2}});
    for (std::size_t rows : {3, 4, 5, 8}) {
        for (std::size_t cols : {3, 6, 8}) {
            for (double ratio = 0.0; ratio < 1.0; ratio += 0.05) {
                auto g = inverse_block_mask(rows, cols, ratio);
                CHECK_FALSE(g.at((rows - 1) / 2, (cols - 1) / 2));
            }
        }
    }
    CHECK(inverse_block_mask(4, 4, 1.0).masked_count() == 16);
}

TEST_CASE("nearest rectangle prefers square, then wide") {
    auto r = nearest_rectangle(8, 8, 16.0);
    CHECK(r.height == 4);
    CHECK(r.width == 4);
    auto w = nearest_rectangle(8, 8, 2.0);
    CHECK(w.height == 1);
    CHECK(w.width == 2);
    auto one = nearest_rectangle(8, 8, 0.3);
    CHECK(one.height * one.width == 1);
    CHECK(nearest_rectangle(8, 8, 0.0).height == 0);
}

TEST_CASE("cyclic shifts") {
    const auto base = inverse_block_mask(4, 4, 0.75);
    CHECK(cyclic_shift(base, 0, 0) == base);
    auto s = cyclic_shift(base, 1, 2);
    CHECK(visible(s) == std::set<std::pair<std::size_t, std::size_t>>{{2, 3}, {2, 0}, {3, 3}, {3, 0}});
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const std::size_t rows = 2 + rng.below(7), cols = 2 + rng.below(7);
        const double ratio = rng.uniform();
        auto m = cyclic_mask(rows, cols, ratio, rng);
        CHECK(m.masked_count() == inverse_block_mask(rows, cols, ratio).masked_count());
    }
}

TEST_CASE("exhaustive shift enumeration is exactly uniform") {
    for (std::size_t rows = 1; rows <= 8; ++rows) {
        for (std::size_t cols = 1; cols <= 8; ++cols) {
            for (double ratio : {0.1, 0.25, 0.4, 0.5, 0.75, 0.9}) {
                const auto base = inverse_block_mask(rows, cols, ratio);
                const std::size_t vis = rows * cols - base.masked_count();
                std::vector<std::size_t> count(rows * cols, 0);
                for (std::size_t dr = 0; dr < rows; ++dr)
                    for (std::size_t dc = 0; dc < cols; ++dc) {
                        auto m = cyclic_shift(base, dr, dc);
                        for (std::size_t i = 0; i < count.size(); ++i) count[i] += m.bits()[i] ? 0 : 1;
                    }
                for (auto c : count) CHECK(c == vis);
            }
        }
    }
}

TEST_CASE("block mask") {
    Rng rng(4);
    CHECK(block_mask(4, 4, 0.0, rng).masked_count() == 0);
    CHECK(block_mask(4, 4, 1.0, rng).masked_count() == 16);
    for (int i = 0; i < 20; ++i) {
        auto m = block_mask(4, 4, 0.25, rng);
        REQUIRE(m.masked_count() == 4);
        std::size_t r0 = 9, c0 = 9;
        for (std::size_t r = 0; r < 4 && r0 == 9; ++r)
            for (std::size_t c = 0; c < 4; ++c)
                if (m.at(r, c)) {
                    r0 = r;
                    c0 = c;
                    break;
                }
        REQUIRE(r0 < 3);
        REQUIRE(c0 < 3);
        CHECK(m.at(r0, c0 + 1));
        CHECK(m.at(r0 + 1, c0));
        CHECK(m.at(r0 + 1, c0 + 1));
    }
}

TEST_CASE("coverage statistics") {
    Rng rng(5);
    auto cyc = coverage_stats(MaskStrategy::cyclic, 8, 8, 0.75, 100000, rng);
    CHECK(cyc.max_deviation < 0.01);
    auto rnd = coverage_stats(MaskStrategy::random, 8, 8, 0.4, 100000, rng);
    CHECK(rnd.max_deviation < 0.02);
    auto inv = coverage_stats(MaskStrategy::inverse_block, 8, 8, 0.75, 1000, rng);
    CHECK(inv.at(3, 3) == 1.0);
    CHECK(inv.at(0, 0) == 0.0);
    std::ostringstream os;
    inv.write_csv(os);
    CHECK(os.str().rfind("row,col,visible_freq\n0,0,0\n", 0) == 0);
    CHECK_THROWS(coverage_stats(MaskStrategy::cyclic, 8, 8, 0.5, 0, rng));
}

TEST_CASE("generators are deterministic per seed") {
    for (auto s : {MaskStrategy::random, MaskStrategy::block, MaskStrategy::inverse_block, MaskStrategy::cyclic}) {
        Rng a(9), b(9);
        for (int i = 0; i < 10; ++i) CHECK(make_mask(s, 6, 6, 0.4, a) == make_mask(s, 6, 6, 0.4, b));
        CHECK(parse_mask_strategy(to_string(s)) == s);
    }
    CHECK_THROWS(parse_mask_strategy("spiral"));
}
