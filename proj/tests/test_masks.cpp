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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "mskd/masks.hpp"
#include "oracles.hpp"

using namespace mskd;

namespace {

Tensor<double> pixel_logits(std::initializer_list<std::pair<double, double>> px, std::size_t h, std::size_t w) {
    Tensor<double> t(Shape{2, h, w});
    std::size_t i = 0;
    for (auto [a, b] : px) {
        t[i] = a;
        t[h * w + i] = b;
        ++i;
    }
    return t;
}

Mask mask_of(std::initializer_list<int> v, std::size_t h, std::size_t w) {
    Mask m(Shape{h, w});
    std::size_t i = 0;
    for (int x : v) m[i++] = static_cast<std::uint8_t>(x);
    return m;
}

} // namespace

TEST_CASE("binarize picks the organ channel only on a strict win") {
    CHECK(masks::binarize_prediction(pixel_logits({{2.0, -1.0}}, 1, 1))[0] == 0);
    CHECK(masks::binarize_prediction(pixel_logits({{-0.5, 0.5}}, 1, 1))[0] == 1);
    const double eps = 1e-9;
    const auto m = masks::binarize_prediction(pixel_logits({{1, 0}, {0, 1}, {3, 3 - eps}, {0, 0}}, 2, 2));
    CHECK(m == mask_of({0, 1, 0, 0}, 2, 2));
}

TEST_CASE("binarize rejects bad input") {
    CHECK_THROWS_AS(masks::binarize_prediction(Tensor<double>(Shape{3, 2, 2})), ShapeError);
    auto t = pixel_logits({{0, std::numeric_limits<double>::quiet_NaN()}}, 1, 1);
    CHECK_THROWS_AS(masks::binarize_prediction(t), InvalidInputError);
    auto inf = pixel_logits({{std::numeric_limits<double>::infinity(), 0}}, 1, 1);
    CHECK_THROWS_AS(masks::binarize_prediction(inf), InvalidInputError);
}

TEST_CASE("background mask is the product of complements") {
    std::vector<Mask> a{mask_of({1, 0}, 1, 2), mask_of({0, 0}, 1, 2)};
    CHECK(masks::background_mask(a) == mask_of({0, 1}, 1, 2));
    std::vector<Mask> zeros{Mask(Shape{2, 2}), Mask(Shape{2, 2})};
    CHECK(masks::background_mask(zeros) == Mask(Shape{2, 2}, 1));
    std::vector<Mask> b{mask_of({1, 0, 1}, 1, 3), mask_of({0, 0, 1}, 1, 3)};
    CHECK(masks::background_mask(b) == mask_of({0, 1, 0}, 1, 3));
}

TEST_CASE("background mask errors") {
    CHECK_THROWS_AS(masks::background_mask(std::vector<Mask>{}), InvalidInputError);
    std::vector<Mask> mismatch{Mask(Shape{2, 2}), Mask(Shape{2, 3})};
    CHECK_THROWS_AS(masks::background_mask(mismatch), ShapeError);
}

TEST_CASE("downsample is repeated 2x2 max pooling") {
    CHECK(masks::downsample_mask(Mask(Shape{4, 4}, 1), 1) == Mask(Shape{2, 2}, 1));
    std::mt19937_64 rng(4);
    const auto r = oracle::random_mask(Shape{8, 8}, rng);
    CHECK(masks::downsample_mask(r, 0) == r);
    Mask one(Shape{4, 4});
    one(0, 3) = 1;
    CHECK(masks::downsample_mask(one, 1) == mask_of({0, 1, 0, 0}, 2, 2));
    CHECK(masks::downsample_mask(r, 2) == oracle::downsample(r, 2));
    CHECK_THROWS_AS(masks::downsample_mask(Mask(Shape{6, 6}), 2), ShapeError);
}

TEST_CASE("region masks are disjoint and match the oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor<double>> logits;
        for (int k = 0; k < 3; ++k) logits.push_back(oracle::random_tensor(Shape{2, 8, 8}, rng));
        const auto set = masks::build_region_masks(logits, 2);
        REQUIRE(set.organ_masks.size() == 3);
        std::vector<Mask> organs;
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(set.organ_masks[k] == oracle::binarize(logits[k]));
            CHECK(set.downsampled[k] == oracle::downsample(set.organ_masks[k], 2));
            organs.push_back(set.organ_masks[k]);
            for (std::size_t i = 0; i < 64; ++i) CHECK(set.background_mask[i] * set.organ_masks[k][i] == 0);
        }
        CHECK(set.background_mask == oracle::background(organs));
        CHECK(set.level == 2);
    }
}
