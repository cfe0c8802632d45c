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

#include <cstdint>
#include <vector>

#include "mskd/model.hpp"

namespace mskd::model {

template <typename T> struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;

    static AdamState for_model(const SegNet<T>& net);
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One bias-corrected Adam step.
template <typename T>
void apply_update(SegNet<T>& net, AdamState<T>& state, const std::vector<Tensor<T>>& grads, double lr);

} // namespace mskd::model
