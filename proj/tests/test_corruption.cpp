#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cuts/corruption.hpp"
#include "cuts/dataset.hpp"

using namespace cuts;

namespace {

CorruptionSpec sn_spec(double rate, std::uint64_t seed) {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::SymmetricNoise;
    spec.rate = rate;
    spec.seed = seed;
    return spec;
}

CorruptionSpec pt_spec(double rate, int target, std::uint64_t seed) {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::PoisonTrigger;
    spec.rate = rate;
    spec.target_class = target;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("SN with two classes always flips to the other class") {
    const auto ds = synth_blobs(2, 50, 4, 0.1, 1);
    const auto out = corrupt(ds, sn_spec(1.0, 2));
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out.corrupted_mask[i] == 1);
        REQUIRE(out.labels[i] == 1 - ds.labels[i]);
        REQUIRE(out.original_labels[i] == ds.labels[i]);
    }
}

TEST_CASE("SN corrupts exactly round(rate*N) samples") {
    const auto ds = synth_blobs(10, 100, 4, 0.1, 5);  // N = 1000
    const auto out = corrupt(ds, sn_spec(0.4, 3));
    std::size_t altered = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.labels[i] != out.original_labels[i]) {
            ++altered;
            REQUIRE(out.corrupted_mask[i] == 1);
        } else {
            REQUIRE(out.corrupted_mask[i] == 0);
        }
    }
    REQUIRE(altered == 400);
    REQUIRE(out.corrupted_count() == 400);

    // rate zero is a no-op
    const auto untouched = corrupt(ds, sn_spec(0.0, 3));
    REQUIRE(untouched.corrupted_count() == 0);
    REQUIRE(untouched.labels == ds.labels);
}

TEST_CASE("SN never preserves a label and spreads targets uniformly") {
    const auto ds = synth_blobs(10, 1500, 2, 0.0, 8);  // 15000 draws at rate 1
    const auto out = corrupt(ds, sn_spec(1.0, 13));
    std::vector<std::size_t> hits(10, 0);
    std::vector<std::size_t> eligible(10, 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out.labels[i] != out.original_labels[i]);
        ++hits[out.labels[i]];
        for (int c = 0; c < 10; ++c) {
            if (c != out.original_labels[i]) ++eligible[c];
        }
    }
    // each target class: Binomial(eligible_c, 1/9) within 5 sigma
    for (int c = 0; c < 10; ++c) {
        const double n = double(eligible[c]);
        const double mean = n / 9.0;
        const double sigma = std::sqrt(n * (1.0 / 9.0) * (8.0 / 9.0));
        REQUIRE(std::abs(double(hits[c]) - mean) <= 5.0 * sigma);
    }
}

TEST_CASE("SN is seed-deterministic and seeds differ") {
    const auto ds = synth_blobs(4, 100, 3, 0.1, 2);
    const auto a = corrupt(ds, sn_spec(0.5, 11));
    const auto b = corrupt(ds, sn_spec(0.5, 11));
    const auto c = corrupt(ds, sn_spec(0.5, 12));
    REQUIRE(a.labels == b.labels);
    REQUIRE(a.corrupted_mask == b.corrupted_mask);
    REQUIRE(a.labels != c.labels);
}

TEST_CASE("AN relabels only mapped classes, exactly as mapped") {
    auto ds = synth_blobs(10, 30, 4, 0.1, 3);  // 300 samples, 30 per class
    CorruptionSpec spec;
    spec.kind = CorruptionKind::AsymmetricNoise;
    spec.mapping = {{9, 1}};
    spec.rate = 0.1;  // 30 samples targeted = all of class 9
    spec.seed = 4;
    const auto out = corrupt(ds, spec);
    REQUIRE(out.corrupted_count() == 30);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out.corrupted_mask[i]) {
            REQUIRE(out.original_labels[i] == 9);
            REQUIRE(out.labels[i] == 1);
        } else {
            REQUIRE(out.labels[i] == out.original_labels[i]);
        }
    }

    // asking for more than the eligible pool is an error
    spec.rate = 0.2;  // 60 > 30 eligible
    REQUIRE_THROWS_WITH(corrupt(ds, spec), Catch::Matchers::ContainsSubstring("eligible"));
}

TEST_CASE("AN rejects identity mappings") {
    CorruptionSpec spec;
    spec.kind = CorruptionKind::AsymmetricNoise;
    spec.mapping = {{3, 3}};
    spec.rate = 0.1;
    REQUIRE_THROWS_AS(spec.validate(10), std::invalid_argument);
}

TEST_CASE("PT stamps the documented 5x5 patch on 28x28 images") {
    // patch side for 3% of 784 px: round(sqrt(0.03 * 784)) = round(4.8497) = 5
    LabeledDataset ds;
    ds.num_classes = 10;
    ds.images = MatrixF(4, 784, 0.25f);
    ds.labels = {3, 4, 5, 6};
    ds.original_labels = ds.labels;
    ds.corrupted_mask.assign(4, 0);

    const auto out = corrupt(ds, pt_spec(1.0, 0, 5));
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out.labels[i] == 0);
        REQUIRE(out.corrupted_mask[i] == 1);
        std::size_t white = 0;
        for (int r = 0; r < 28; ++r) {
            for (int c = 0; c < 28; ++c) {
                const float v = out.images(i, std::size_t(r) * 28 + c);
                const bool in_patch = r >= 23 && c >= 23;
                if (in_patch) {
                    REQUIRE(v == 1.0f);
                    ++white;
                } else {
                    REQUIRE(v == 0.25f);  // outside pixels bitwise untouched
                }
            }
        }
        REQUIRE(white == 25);
    }
}

TEST_CASE("PT requires a square grid or declared geometry") {
    LabeledDataset ds;
    ds.num_classes = 2;
    ds.images = MatrixF(2, 12, 0.5f);  // 12 is not a perfect square
    ds.labels = {0, 1};
    ds.original_labels = ds.labels;
    ds.corrupted_mask.assign(2, 0);

    auto spec = pt_spec(1.0, 0, 1);
    REQUIRE_THROWS_WITH(corrupt(ds, spec), Catch::Matchers::ContainsSubstring("non-square"));

    spec.image_height = 3;
    spec.image_width = 4;
    const auto out = corrupt(ds, spec);  // side = round(sqrt(0.03*12)) = 1
    REQUIRE(out.images(0, 11) == 1.0f);
    REQUIRE(out.images(0, 10) == 0.5f);

    spec.image_width = 5;  // 3*5 != 12
    REQUIRE_THROWS_WITH(corrupt(ds, spec), Catch::Matchers::ContainsSubstring("grid"));
}

TEST_CASE("make_proxy PT triggers every sample") {
    const auto part = synth_blobs(10, 10, 784, 0.1, 9);
    const auto proxy = make_proxy(part, pt_spec(0.02, 0, 7));  // rate ignored
    REQUIRE(proxy.size() == 100);
    for (std::size_t i = 0; i < proxy.size(); ++i) {
        REQUIRE(proxy.labels[i] == 0);
        REQUIRE(proxy.corrupted_mask[i] == 1);
        REQUIRE(proxy.images(i, 783) == 1.0f);
        REQUIRE(proxy.original_labels[i] == part.labels[i]);
    }
}

TEST_CASE("make_proxy AN keeps only the mapped classes") {
    const auto part = synth_blobs(10, 10, 4, 0.1, 10);  // balanced 100
    CorruptionSpec spec;
    spec.kind = CorruptionKind::AsymmetricNoise;
    spec.mapping = default_asymmetric_mapping();  // covers 4 of 10 classes
    spec.rate = 0.4;
    spec.seed = 1;
    const auto proxy = make_proxy(part, spec);
    REQUIRE(proxy.size() == 40);
    for (std::size_t i = 0; i < proxy.size(); ++i) {
        REQUIRE(proxy.corrupted_mask[i] == 1);
        REQUIRE(proxy.labels[i] == spec.mapping.at(proxy.original_labels[i]));
    }

    // nothing eligible -> explicit error
    CorruptionSpec narrow = spec;
    narrow.mapping = {{0, 1}};
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < part.size(); ++i) {
        if (part.labels[i] != 0) keep.push_back(i);
    }
    const auto no_zeros = part.subset(keep);
    REQUIRE_THROWS_WITH(make_proxy(no_zeros, narrow),
                        Catch::Matchers::ContainsSubstring("empty"));
}

TEST_CASE("make_proxy SN with two seeds shares images, not labels") {
    const auto part = synth_blobs(10, 20, 6, 0.1, 11);
    const auto a = make_proxy(part, sn_spec(0.4, 100));
    const auto b = make_proxy(part, sn_spec(0.4, 200));
    REQUIRE(a.images == b.images);
    REQUIRE(a.labels != b.labels);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a.labels[i] != part.labels[i]);
        REQUIRE(b.labels[i] != part.labels[i]);
        REQUIRE(a.corrupted_mask[i] == 1);
    }
}

TEST_CASE("corrupting a corrupted dataset preserves provenance of untouched rows") {
    const auto ds = synth_blobs(5, 40, 4, 0.1, 21);
    const auto once = corrupt(ds, sn_spec(0.2, 1));
    const auto twice = corrupt(once, sn_spec(0.2, 2));
    for (std::size_t i = 0; i < twice.size(); ++i) {
        if (!twice.corrupted_mask[i]) {
            REQUIRE(twice.original_labels[i] == ds.labels[i]);
            REQUIRE(twice.labels[i] == ds.labels[i]);
        }
    }
}
