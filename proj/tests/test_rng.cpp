#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "cuts/rng.hpp"

using namespace cuts;

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("below stays in range and covers the range") {
    Rng rng(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = rng.below(6);
        REQUIRE(v < 6);
        seen.insert(v);
    }
    REQUIRE(seen.size() == 6);
}

TEST_CASE("uniform and normal are finite and sane") {
    Rng rng(3);
    double sum = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += rng.normal();
    }
    REQUIRE(std::abs(sum / 1000.0) < 0.2);  // ~N(0, 1/sqrt(1000))
}

TEST_CASE("derive_seed separates stages and masters") {
    const auto a = derive_seed(11, "train-mix");
    REQUIRE(a == derive_seed(11, "train-mix"));
    REQUIRE(a != derive_seed(11, "train-oracle"));
    REQUIRE(a != derive_seed(12, "train-mix"));
}

TEST_CASE("shuffle is a permutation") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    Rng rng(9);
    auto w = v;
    rng.shuffle(w);
    REQUIRE(w != v);
    std::sort(w.begin(), w.end());
    REQUIRE(w == v);
}

TEST_CASE("sample_indices draws m distinct sorted indices") {
    Rng rng(5);
    const auto idx = sample_indices(100, 40, rng);
    REQUIRE(idx.size() == 40);
    REQUIRE(std::is_sorted(idx.begin(), idx.end()));
    REQUIRE(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    REQUIRE(idx.back() < 100);

    // m == n returns everything
    Rng rng2(5);
    const auto all = sample_indices(10, 10, rng2);
    for (std::size_t i = 0; i < 10; ++i) REQUIRE(all[i] == i);
}
