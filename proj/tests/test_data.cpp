// Copyright 2026 The MSKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <set>

#include "doctest.h"
#include "mskd/data.hpp"
#include "mskd/io.hpp"

using namespace mskd;

namespace {

data::SynthConfig tiny(int K = 3, int n = 12) {
    data::SynthConfig c;
    c.num_organs = K;
    c.num_train = n;
    c.num_test = 4;
    return c;
}

std::vector<char> dir_bytes(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<char> all;
    for (const auto& f : files) {
        const auto name = f.filename().string();
        all.insert(all.end(), name.begin(), name.end());
        const auto b = io::read_file(f);
        all.insert(all.end(), b.begin(), b.end());
    }
    return all;
}

} // namespace

TEST_CASE("generation is deterministic down to the bytes") {
    const auto root = std::filesystem::temp_directory_path() / "mskd_test_data_det";
    std::filesystem::remove_all(root);
    const auto a = data::generate_synthetic_dataset(tiny()), b = data::generate_synthetic_dataset(tiny());
    data::write_dataset(root / "a", a.train);
    data::write_dataset(root / "b", b.train);
    CHECK(dir_bytes(root / "a") == dir_bytes(root / "b"));
    auto other = tiny();
    other.seed = 8;
    CHECK(data::generate_synthetic_dataset(other).train.items[0].image != a.train.items[0].image);
    std::filesystem::remove_all(root);
}

TEST_CASE("noise-free organs stay inside their bands") {
    auto c = tiny(1, 6);
    c.noise_std = 0;
    const auto ds = data::generate_synthetic_dataset(c).train;
    const auto band = c.resolved_bands()[0];
    for (const auto& item : ds.items)
        for (std::size_t i = 0; i < item.label.size(); ++i)
            if (item.label[i] == 1) {
                CHECK(item.image[i] >= band.lo - 1e-3);
                CHECK(item.image[i] <= band.hi + 1e-3);
            }
}

TEST_CASE("every label value appears in a 200 image corpus") {
    auto c = tiny(3, 200);
    c.num_test = 0;
    const auto ds = data::generate_synthetic_dataset(c).train;
    std::set<int> seen;
    for (const auto& item : ds.items)
        for (auto v : item.label.values()) seen.insert(v);
    CHECK(seen == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("binary derivation") {
    data::Dataset multi;
    multi.num_organs = 2;
    multi.image_size = 1;
    data::Item item;
    item.image = Tensor<float>(Shape{1, 3});
    item.label = LabelMap(Shape{1, 3}, std::vector<std::uint8_t>{0, 1, 2});
    multi.items.push_back(item);
    CHECK(data::derive_binary_dataset(multi, 1).items[0].label.values()[1] == 1);
    CHECK(data::derive_binary_dataset(multi, 1).items[0].label == LabelMap(Shape{1, 3}, std::vector<std::uint8_t>{0, 1, 0}));
    CHECK(data::derive_binary_dataset(multi, 2).items[0].label == LabelMap(Shape{1, 3}, std::vector<std::uint8_t>{0, 0, 1}));
    CHECK(data::derive_binary_dataset(multi, 2).kind == "binary-organ-2");
    CHECK_THROWS_AS(data::derive_binary_dataset(multi, 0), InvalidInputError);
    CHECK_THROWS_AS(data::derive_binary_dataset(multi, 3), InvalidInputError);
}

TEST_CASE("binary labels OR back to the multi-organ support") {
    const auto ds = data::generate_synthetic_dataset(tiny()).train;
    const auto bins = data::derive_binary_datasets(ds, false);
    for (std::size_t i = 0; i < ds.items.size(); ++i)
        for (std::size_t p = 0; p < ds.items[i].label.size(); ++p) {
            bool any = false;
            for (const auto& b : bins) any = any || b.items[i].label[p];
            CHECK(any == (ds.items[i].label[p] != 0));
        }
}

TEST_CASE("disjoint subsets") {
    auto c = tiny(3, 150);
    c.num_test = 0;
    const auto bins = data::derive_binary_datasets(data::generate_synthetic_dataset(c).train, true);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& b : bins) {
        CHECK(b.items.size() == 50);
        for (const auto& item : b.items) seen.insert(item.source);
        total += b.items.size();
    }
    CHECK(seen.size() == total);
}

TEST_CASE("clip and normalize") {
    const Tensor<float> img(Shape{1, 5}, std::vector<float>{-325, 325, 0, -1000, 1000});
    const auto n = data::clip_normalize_intensity(img, -325, 325);
    CHECK(n[0] == -1.0f);
    CHECK(n[1] == 1.0f);
    CHECK(n[2] == 0.0f);
    CHECK(n[3] == -1.0f);
    CHECK(n[4] == 1.0f);
    const auto m = data::clip_normalize_intensity(Tensor<float>(Shape{1}, 15.0f), 10, 20);
    CHECK(m[0] == 0.0f);
    CHECK_THROWS_AS(data::clip_normalize_intensity(img, 1, 1), ConfigError);
}

TEST_CASE("foreground-biased sampling") {
    data::Dataset ds;
    for (int i = 0; i < 20; ++i) {
        data::Item item;
        item.foreground = i % 10 == 0;
        ds.items.push_back(item);
    }
    std::mt19937_64 rng(1), again(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto idx = data::sample_batch(ds, 4, 0.33, rng);
        int fg = 0;
        for (auto i : idx) fg += ds.items[i].foreground;
        CHECK(fg >= 2);
        CHECK(data::sample_batch(ds, 4, 0.33, again) == idx);
    }
    std::mt19937_64 r3(2);
    CHECK(data::sample_batch(ds, 4, 0.0, r3).size() == 4);
    for (auto& item : ds.items) item.foreground = false;
    CHECK_THROWS_AS(data::sample_batch(ds, 4, 0.33, r3), SamplingError);
    CHECK_NOTHROW(data::sample_batch(ds, 4, 0.0, r3));
    CHECK_THROWS_AS(data::sample_batch(data::Dataset{}, 4, 0.0, r3), SamplingError);
}

TEST_CASE("datasets round trip through disk, with and without labels") {
    const auto root = std::filesystem::temp_directory_path() / "mskd_test_data_rt";
    std::filesystem::remove_all(root);
    const auto bin = data::derive_binary_dataset(data::generate_synthetic_dataset(tiny()).train, 2);
    data::write_dataset(root, bin);
    const auto back = data::load_dataset(root);
    CHECK(back.kind == bin.kind);
    REQUIRE(back.items.size() == bin.items.size());
    for (std::size_t i = 0; i < bin.items.size(); ++i) {
        CHECK(back.items[i].image == bin.items[i].image);
        CHECK(back.items[i].label == bin.items[i].label);
        CHECK(back.items[i].foreground == bin.items[i].foreground);
        CHECK(back.items[i].origin_organ == 2);
    }
    const auto blind = data::load_dataset(root, false);
    CHECK(blind.items[0].label.empty());
    CHECK(blind.items[0].foreground == bin.items[0].foreground);

    auto bad = io::read_tensor<std::uint8_t>(root / io::KeyValues::load(root / "manifest.txt").get("item.0.label"));
    bad[0] = 2;
    io::write_tensor(root / io::KeyValues::load(root / "manifest.txt").get("item.0.label"), bad);
    CHECK_THROWS_AS(data::load_dataset(root), DataError);
    CHECK_THROWS_AS(data::load_dataset(root / "nope"), DataError);
    std::filesystem::remove_all(root);
}

TEST_CASE("config validation") {
    auto c = tiny();
    c.axis_max = 40;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.noise_std = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.bands = {{0, 100}, {50, 150}, {200, 250}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    io::KeyValues kv;
    tiny().to_keys(kv);
    CHECK(data::SynthConfig::from_keys(kv).resolved_bands().size() == 3);
}
