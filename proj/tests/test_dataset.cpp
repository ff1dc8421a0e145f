#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "cuts/dataset.hpp"

using namespace cuts;
namespace fs = std::filesystem;

namespace {

void write_u32_be(std::ofstream& out, std::uint32_t v) {
    const std::uint8_t bytes[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                                   std::uint8_t(v >> 8), std::uint8_t(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

struct IdxFixture {
    fs::path images;
    fs::path labels;
};

/// Two 2x2 images: one all-black, one all-white, labels 0 and 1.
IdxFixture make_idx_fixture(const fs::path& dir, std::uint32_t image_magic = 0x803,
                            std::uint32_t label_magic = 0x801, bool truncate_images = false,
                            std::uint32_t label_count = 2) {
    fs::create_directories(dir);
    IdxFixture fixture{dir / "img.idx", dir / "lab.idx"};
    {
        std::ofstream out(fixture.images, std::ios::binary);
        write_u32_be(out, image_magic);
        write_u32_be(out, 2);
        write_u32_be(out, 2);
        write_u32_be(out, 2);
        const std::uint8_t px[8] = {0, 0, 0, 0, 255, 255, 255, 255};
        out.write(reinterpret_cast<const char*>(px), truncate_images ? 5 : 8);
    }
    {
        std::ofstream out(fixture.labels, std::ios::binary);
        write_u32_be(out, label_magic);
        write_u32_be(out, label_count);
        const std::uint8_t lab[2] = {0, 1};
        out.write(reinterpret_cast<const char*>(lab), 2);
    }
    return fixture;
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "cuts_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("load_idx parses a hand-built fixture with 0/255 pixels") {
    const auto f = make_idx_fixture(temp_dir("idx_ok"));
    const auto ds = load_idx(f.images, f.labels);
    REQUIRE(ds.size() == 2);
    REQUIRE(ds.dim() == 4);
    REQUIRE(ds.num_classes == 2);
    for (std::size_t j = 0; j < 4; ++j) {
        REQUIRE(ds.images(0, j) == 0.0f);
        REQUIRE(ds.images(1, j) == 1.0f);
    }
    REQUIRE(ds.labels == std::vector<std::int32_t>{0, 1});
    REQUIRE(ds.corrupted_mask == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("load_idx rejects bad magic numbers") {
    const auto wrong_img = make_idx_fixture(temp_dir("idx_badimg"), 0x801, 0x801);
    REQUIRE_THROWS_WITH(load_idx(wrong_img.images, wrong_img.labels),
                        Catch::Matchers::ContainsSubstring("bad magic"));
    // a labels file carrying the images magic is refused as well
    const auto wrong_lab = make_idx_fixture(temp_dir("idx_badlab"), 0x803, 0x803);
    REQUIRE_THROWS_WITH(load_idx(wrong_lab.images, wrong_lab.labels),
                        Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("load_idx rejects truncated payload and count mismatch") {
    const auto truncated = make_idx_fixture(temp_dir("idx_trunc"), 0x803, 0x801, true);
    REQUIRE_THROWS_WITH(load_idx(truncated.images, truncated.labels),
                        Catch::Matchers::ContainsSubstring("truncated"));
    const auto mismatched = make_idx_fixture(temp_dir("idx_count"), 0x803, 0x801, false, 3);
    REQUIRE_THROWS_WITH(load_idx(mismatched.images, mismatched.labels),
                        Catch::Matchers::ContainsSubstring("count mismatch"));
}

TEST_CASE("load_idx reads the bundled 10k-digit corpus") {
    const fs::path dir = fs::path(CUTS_SOURCE_DIR) / "data" / "mnist10k";
    if (!fs::exists(dir / "mnist10k-images-idx3-ubyte")) {
        SKIP("bundled corpus not present");
    }
    const auto ds = load_idx(dir / "mnist10k-images-idx3-ubyte",
                             dir / "mnist10k-labels-idx1-ubyte");
    REQUIRE(ds.size() == 10000);
    REQUIRE(ds.dim() == 784);
    REQUIRE(ds.num_classes == 10);
    for (std::size_t i = 0; i < ds.images.size(); i += 97) {
        REQUIRE(ds.images.data()[i] >= 0.0f);
        REQUIRE(ds.images.data()[i] <= 1.0f);
    }
}

TEST_CASE("synth_blobs collapses to centers at zero spread") {
    const auto ds = synth_blobs(3, 5, 6, 0.0, 42);
    REQUIRE(ds.size() == 15);
    for (int c = 0; c < 3; ++c) {
        const float* first = ds.images.row(std::size_t(c) * 5);
        for (int s = 1; s < 5; ++s) {
            const float* other = ds.images.row(std::size_t(c) * 5 + s);
            for (int j = 0; j < 6; ++j) REQUIRE(other[j] == first[j]);
        }
    }
}

TEST_CASE("synth_blobs is seed-deterministic") {
    const auto a = synth_blobs(4, 10, 8, 0.05, 9);
    const auto b = synth_blobs(4, 10, 8, 0.05, 9);
    REQUIRE(a.images == b.images);
    REQUIRE(a.labels == b.labels);
    REQUIRE(!(a.images == synth_blobs(4, 10, 8, 0.05, 10).images));
}

TEST_CASE("tight far-apart blobs are 1-NN separable") {
    const auto ds = synth_blobs(2, 60, 16, 0.01, 123);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double best = 1e300;
        std::size_t best_j = i;
        for (std::size_t j = 0; j < ds.size(); ++j) {
            if (j == i) continue;
            double d = 0;
            for (std::size_t t = 0; t < ds.dim(); ++t) {
                const double diff = double(ds.images(i, t)) - double(ds.images(j, t));
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_j = j;
            }
        }
        REQUIRE(ds.labels[best_j] == ds.labels[i]);
    }
}

TEST_CASE("split_proxy carves an exact stratified holdout") {
    const auto ds = synth_blobs(10, 500, 4, 0.1, 6);  // N = 5000
    const auto [rest, held] = split_proxy(ds, 0.02, 17);
    REQUIRE(held.size() == 100);
    REQUIRE(rest.size() == 4900);
    // stratification: exactly 10 per class here (500 * 0.02)
    std::vector<int> per_class(10, 0);
    for (std::size_t i = 0; i < held.size(); ++i) ++per_class[held.labels[i]];
    for (int c = 0; c < 10; ++c) REQUIRE(per_class[c] == 10);
}

TEST_CASE("split_proxy rejects empty or full holdouts") {
    const auto ds = synth_blobs(2, 10, 4, 0.1, 6);  // N = 20
    REQUIRE_THROWS_AS(split_proxy(ds, 0.01, 1), std::invalid_argument);  // rounds to 0
    REQUIRE_THROWS_AS(split_proxy(ds, 0.999, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(split_proxy(ds, 0.0, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(split_proxy(ds, 1.0, 1), std::invalid_argument);
}

TEST_CASE("split_proxy parts reassemble to the original dataset") {
    const auto ds = synth_blobs(3, 40, 5, 0.2, 10);
    const auto [rest, held] = split_proxy(ds, 0.15, 3);
    REQUIRE(rest.size() + held.size() == ds.size());

    // merge by matching rows: every original row appears exactly once
    std::vector<int> seen(ds.size(), 0);
    const auto find_row = [&](const LabeledDataset& part, std::size_t r) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (seen[i]) continue;
            bool same = ds.labels[i] == part.labels[r];
            for (std::size_t j = 0; same && j < ds.dim(); ++j) {
                same = ds.images(i, j) == part.images(r, j);
            }
            if (same) {
                seen[i] = 1;
                return true;
            }
        }
        return false;
    };
    for (std::size_t r = 0; r < rest.size(); ++r) REQUIRE(find_row(rest, r));
    for (std::size_t r = 0; r < held.size(); ++r) REQUIRE(find_row(held, r));
}

TEST_CASE("dataset directory round trip") {
    auto ds = synth_blobs(3, 20, 7, 0.1, 77);
    ds.labels[4] = (ds.labels[4] + 1) % 3;
    ds.corrupted_mask[4] = 1;
    const auto dir = temp_dir("ds_roundtrip");
    save_dataset(ds, dir / "d");
    const auto loaded = load_dataset(dir / "d");
    REQUIRE(loaded.images == ds.images);
    REQUIRE(loaded.labels == ds.labels);
    REQUIRE(loaded.original_labels == ds.original_labels);
    REQUIRE(loaded.corrupted_mask == ds.corrupted_mask);
    REQUIRE(loaded.num_classes == ds.num_classes);
}

TEST_CASE("dataset validate catches inconsistencies") {
    auto ds = synth_blobs(2, 5, 3, 0.1, 1);
    ds.labels[0] = 1 - ds.labels[0];  // altered but not flagged corrupted
    REQUIRE_THROWS_AS(ds.validate(), std::invalid_argument);
}
