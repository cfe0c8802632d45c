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

#include "mskd/masks.hpp"

#include <cmath>
#include <string>

namespace mskd::masks {

Mask binarize_prediction(const Tensor<double>& teacher_logits) {
    if (teacher_logits.rank() != 3 || teacher_logits.dim(0) != 2)
        throw ShapeError("binarize_prediction: expected 2×H×W logits, got " + shape_string(teacher_logits.shape()));
    const std::size_t H = teacher_logits.dim(1), W = teacher_logits.dim(2);
    Mask out(Shape{H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double bg = teacher_logits(0, y, x), fg = teacher_logits(1, y, x);
            if (!std::isfinite(bg) || !std::isfinite(fg))
                throw InvalidInputError("binarize_prediction: non-finite logit at (" + std::to_string(y) + "," +
                                        std::to_string(x) + ")");
            out(y, x) = fg > bg ? 1 : 0;
        }
    return out;
}

Mask background_mask(std::span<const Mask> organ_masks) {
    if (organ_masks.empty()) throw InvalidInputError("background_mask: no organ masks given");
    Mask out(organ_masks.front().shape(), 1);
    for (std::size_t k = 0; k < organ_masks.size(); ++k) {
        require_shape(organ_masks[k].shape(), out.shape(), "background_mask");
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto m = organ_masks[k][i];
            if (m > 1) throw InvalidInputError("background_mask: mask " + std::to_string(k) + " is not binary");
            out[i] = static_cast<std::uint8_t>(out[i] * (1 - m));
        }
    }
    return out;
}

Mask downsample_mask(const Mask& mask, int levels) {
    if (levels < 0) throw InvalidInputError("downsample_mask: negative level");
    if (mask.rank() != 2) throw ShapeError("downsample_mask: expected H×W, got " + shape_string(mask.shape()));
    const std::size_t factor = std::size_t{1} << levels;
    if (mask.dim(0) % factor || mask.dim(1) % factor)
        throw ShapeError("downsample_mask: " + shape_string(mask.shape()) + " not divisible by 2^" +
                         std::to_string(levels));
    Mask cur = mask;
    for (int l = 0; l < levels; ++l) {
        const std::size_t h = cur.dim(0) / 2, w = cur.dim(1) / 2;
        Mask next(Shape{h, w});
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                next(y, x) = cur(2 * y, 2 * x) | cur(2 * y, 2 * x + 1) | cur(2 * y + 1, 2 * x) |
                             cur(2 * y + 1, 2 * x + 1);
        cur = std::move(next);
    }
    return cur;
}

RegionMaskSet build_region_masks(std::span<const Tensor<double>> teacher_logits, int feature_level) {
    RegionMaskSet set;
    set.level = feature_level;
    set.organ_masks.reserve(teacher_logits.size());
    for (const auto& logits : teacher_logits) set.organ_masks.push_back(binarize_prediction(logits));
    set.background_mask = background_mask(set.organ_masks);
    for (const auto& m : set.organ_masks) set.downsampled.push_back(downsample_mask(m, feature_level));
    return set;
}

} // namespace mskd::masks
