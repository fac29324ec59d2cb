#include <doctest.h>

#include <cmath>

#include "crowdflow/density.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/mesa.hpp"
#include "crowdflow/rng.hpp"
#include "ref/reference.hpp"

using namespace crowdflow;

namespace {

// Dyadic values (multiples of 1/16) keep every partial sum exact in double,
// so value ties are real ties and the lexicographic rule can be checked
// exactly against the brute-force box enumeration.
Grid2D random_dyadic_grid(Rng& rng, int max_side) {
    const int w = 1 + static_cast<int>(rng.next_below(max_side));
    const int h = 1 + static_cast<int>(rng.next_below(max_side));
    Grid2D g(w, h, 1);
    for (float& v : g.data()) {
        v = static_cast<float>(static_cast<int>(rng.next_below(161)) - 80) / 16.0f;
    }
    return g;
}

} // namespace

TEST_SUITE_BEGIN("mesa");

TEST_CASE("single negative element") {
    const Grid2D g(1, 1, 1, {-1.0f});
    const auto r = max_subarray(g);
    CHECK(r.value == doctest::Approx(-1.0));
    CHECK(r.box == BoxRegion(0, 0, 0, 0));
}

TEST_CASE("2x2 example has the bottom row as its best box") {
    const Grid2D g(2, 2, 1, {1.0f, -2.0f, 3.0f, 4.0f});
    const auto r = max_subarray(g);
    const auto brute = ref::max_subarray_bruteforce(g);
    CHECK(r.value == doctest::Approx(7.0));
    CHECK(r.box == BoxRegion(0, 1, 1, 1));
    CHECK(brute.value == doctest::Approx(7.0));
    CHECK(brute.box == r.box);
}

TEST_CASE("all-zero grid resolves ties to the smallest box tuple") {
    const Grid2D g(3, 3, 1, 0.0f);
    const auto r = max_subarray(g);
    CHECK(r.value == 0.0);
    CHECK(r.box == BoxRegion(0, 0, 0, 0));
}

TEST_CASE("matches brute force exactly on 200 random dyadic grids") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const Grid2D g = random_dyadic_grid(rng, 12);
        const auto fast = max_subarray(g);
        const auto brute = ref::max_subarray_bruteforce(g);
        REQUIRE(fast.value == doctest::Approx(brute.value).epsilon(1e-9));
        REQUIRE(fast.box == brute.box);
    }
}

TEST_CASE("wide grids use the transposed reduction with identical semantics") {
    Rng rng(55);
    for (int trial = 0; trial < 50; ++trial) {
        const int w = 8 + static_cast<int>(rng.next_below(8));
        const int h = 1 + static_cast<int>(rng.next_below(4)); // force w > h
        Grid2D g(w, h, 1);
        for (float& v : g.data()) {
            v = static_cast<float>(static_cast<int>(rng.next_below(161)) - 80) / 16.0f;
        }
        const auto fast = max_subarray(g);
        const auto brute = ref::max_subarray_bruteforce(g);
        REQUIRE(fast.value == doctest::Approx(brute.value).epsilon(1e-9));
        REQUIRE(fast.box == brute.box);
    }
}

TEST_CASE("mesa distance of a map with itself is zero") {
    Rng rng(9);
    Grid2D g(8, 8, 1);
    for (float& v : g.data()) v = static_cast<float>(rng.uniform(0.0, 3.0));
    CHECK(mesa_distance(g, g) == 0.0);
}

TEST_CASE("checkerboard example") {
    const Grid2D f1(2, 2, 1, {1.0f, 0.0f, 0.0f, 1.0f});
    const Grid2D f2(2, 2, 1, {0.0f, 1.0f, 1.0f, 0.0f});
    // brute force over all signed-difference boxes: the best single cell wins
    CHECK(mesa_distance(f1, f2) == doctest::Approx(1.0));
}

TEST_CASE("ones vs zeros") {
    const Grid2D ones(2, 2, 1, 1.0f);
    const Grid2D zeros(2, 2, 1, 0.0f);
    CHECK(mesa_distance(ones, zeros) == doctest::Approx(4.0));
    CHECK(mesa_distance(zeros, ones) == doctest::Approx(4.0));
}

TEST_CASE("mesa distance is symmetric and nonnegative on random pairs") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 2 + static_cast<int>(rng.next_below(10));
        const int h = 2 + static_cast<int>(rng.next_below(10));
        Grid2D a(w, h, 1), b(w, h, 1);
        for (float& v : a.data()) v = static_cast<float>(rng.uniform(0.0, 2.0));
        for (float& v : b.data()) v = static_cast<float>(rng.uniform(0.0, 2.0));
        const double dab = mesa_distance(a, b);
        const double dba = mesa_distance(b, a);
        CHECK(dab == doctest::Approx(dba).epsilon(1e-12));
        CHECK(dab >= 0.0);
        // Lower bound: the whole-image box is one of the candidates. Exact in
        // the f32 difference-grid semantics; against double count totals the
        // per-pixel f32 rounding of the difference needs a small allowance.
        CHECK(dab >= std::abs(grid_sum(grid_difference(a, b))) - 1e-9);
        CHECK(dab >= std::abs(count_total(a) - count_total(b)) - 1e-4);
    }
}

TEST_CASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(mesa_distance(Grid2D(2, 2, 1), Grid2D(3, 2, 1)), validation_error);
}

TEST_SUITE_END();
