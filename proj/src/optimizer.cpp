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

#include "mskd/optimizer.hpp"

#include <cmath>
#include <string>

namespace mskd::model {

template <typename T> AdamState<T> AdamState<T>::for_model(const SegNet<T>& net) {
    AdamState s;
    for (const auto& p : net.parameters()) {
        s.first_moment.emplace_back(p.value.shape());
        s.second_moment.emplace_back(p.value.shape());
    }
    return s;
}

template <typename T>
void apply_update(SegNet<T>& net, AdamState<T>& state, const std::vector<Tensor<T>>& grads, double lr) {
    auto& params = net.parameters();
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw InvalidInputError("apply_update: " + std::to_string(grads.size()) + " gradients and " +
                                std::to_string(state.first_moment.size()) + " moments for " +
                                std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value.shape() || state.first_moment[i].shape() != params[i].value.shape())
            throw InvalidInputError("apply_update: gradient for '" + params[i].name + "' has shape " +
                                    shape_string(grads[i].shape()) + ", parameter is " +
                                    shape_string(params[i].value.shape()));
    }
    ++state.step;
    const double step = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(kAdamBeta1, step);
    const double c2 = 1.0 - std::pow(kAdamBeta2, step);
    const T b1 = static_cast<T>(kAdamBeta1), b2 = static_cast<T>(kAdamBeta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(kAdamEps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T* w = params[i].value.data();
        T* m = state.first_moment[i].data();
        T* v = state.second_moment[i].data();
        const T* g = grads[i].data();
        const std::size_t n = params[i].value.size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void apply_update<float>(SegNet<float>&, AdamState<float>&, const std::vector<Tensor<float>>&, double);
template void apply_update<double>(SegNet<double>&, AdamState<double>&, const std::vector<Tensor<double>>&, double);

} // namespace mskd::model
