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

#pragma once

#include <span>
#include <vector>

#include "mskd/tensor.hpp"

namespace mskd::masks {

/// Region masks gating the distillation losses for one image.
struct RegionMaskSet {
    std::vector<Mask> organ_masks;       ///< M^k, one H×W mask per teacher
    Mask background_mask;                ///< M^B = ∏_k (1 − M^k)
    std::vector<Mask> downsampled;       ///< M^{k,l} at (H/2^l)×(W/2^l)
    int level = 0;
};

/// 1 where the organ logit strictly exceeds the background logit.
/// Equal logits resolve to background.
Mask binarize_prediction(const Tensor<double>& teacher_logits);

Mask background_mask(std::span<const Mask> organ_masks);

/// `levels` rounds of 2×2 max pooling.
Mask downsample_mask(const Mask& mask, int levels);

/// All masks for one image from the K teachers' 2×H×W logits.
RegionMaskSet build_region_masks(std::span<const Tensor<double>> teacher_logits, int feature_level);

} // namespace mskd::masks
