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

#include "mskd/tensor.hpp"

// Dense B×C×H×W layer kernels. The OpenMP versions split work into blocks
// fixed by the tensor shapes alone (convolutions run as im2col + GEMM over
// fixed row blocks) and reduce partial results in a fixed order, so output
// does not depend on the thread count. `reference` holds plain serial loops
// used as test oracles and as the benchmark baseline.

namespace mskd::kernels {

/// Stride-1 convolution with zero "same" padding; weight is Co×Ci×k×k, k odd.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight);
/// Accumulates into grad_weight / grad_bias.
template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& in, Tensor<T>& grad_weight,
                            Tensor<T>& grad_bias);

/// Per-(item, channel) normalization over H×W with affine gamma/beta.
/// `normalized` and `inv_std` are saved for the backward pass.
template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& in, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                Tensor<T>& normalized, Tensor<T>& inv_std);
template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized, const Tensor<T>& inv_std,
                                 const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta);

template <typename T> Tensor<T> leaky_relu_forward(const Tensor<T>& in, T slope);
template <typename T> Tensor<T> leaky_relu_backward(const Tensor<T>& grad_out, const Tensor<T>& in, T slope);

/// 2×2 max pooling; `argmax` records the winning offset (0..3) per output.
template <typename T> Tensor<T> maxpool2_forward(const Tensor<T>& in, Tensor<std::uint8_t>& argmax);
template <typename T> Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const Tensor<std::uint8_t>& argmax);

/// Nearest-neighbour ×2 upsampling.
template <typename T> Tensor<T> upsample2_forward(const Tensor<T>& in);
template <typename T> Tensor<T> upsample2_backward(const Tensor<T>& grad_out);

/// Channel concatenation of two B×C×H×W tensors and its adjoint.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& grad, std::size_t channels_a, Tensor<T>& grad_a, Tensor<T>& grad_b);

namespace reference {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight);
template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& in, Tensor<T>& grad_weight,
                            Tensor<T>& grad_bias);
template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& in, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                Tensor<T>& normalized, Tensor<T>& inv_std);
template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized, const Tensor<T>& inv_std,
                                 const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta);
template <typename T> Tensor<T> maxpool2_forward(const Tensor<T>& in, Tensor<std::uint8_t>& argmax);

} // namespace reference

/// Threads OpenMP will use for the parallel kernels (1 without OpenMP).
int max_threads();

} // namespace mskd::kernels
