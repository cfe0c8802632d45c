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
#include <string>
#include <string_view>
#include <vector>

#include "mskd/tensor.hpp"

namespace mskd::model {

struct ModelConfig {
    int in_channels = 1;
    int out_channels = 2;
    int depth = 3;
    int base_width = 16;
    int feature_tap_level = 1;

    void validate() const;
    /// Throws ShapeError unless a B×in_channels×H×W batch is acceptable.
    void check_input(const Shape& batch_shape) const;
    int channels_at(int level) const { return base_width << level; }
    int tap_channels() const { return channels_at(feature_tap_level); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T> struct Parameter {
    std::string name;
    Tensor<T> value;
};

/// Batched network outputs. `features` is the decoder block output at
/// feature_tap_level, taken after its last normalisation and before the
/// activation.
template <typename T> struct ForwardResult {
    Tensor<T> logits;   ///< B×out_channels×H×W
    Tensor<T> features; ///< B×C_l×(H/2^l)×(W/2^l)
};

/// Activations recorded by a forward pass, consumed by backward().
template <typename T> struct Tape {
    enum class Kind { Conv, Norm, LeakyRelu, MaxPool, Upsample, Concat };
    struct Op {
        Kind kind;
        int param = -1; // first parameter index of the layer
        int in = -1;
        int in2 = -1;
        int out = -1;
        int aux = -1;
    };
    std::vector<Tensor<T>> values;
    std::vector<Op> ops;
    std::vector<Tensor<T>> norm_normalized, norm_inv_std;
    std::vector<Tensor<std::uint8_t>> pool_argmax;
    int logits = -1;
    int features = -1;
};

/// U-Net style encoder/decoder: conv-norm-LeakyReLU pairs per level, 2×2
/// max-pool down, nearest ×2 up followed by a conv, skip concatenation and
/// a 1×1 projection head. Teacher and student share everything except the
/// head's output channel count.
template <typename T> class SegNet {
public:
    static SegNet build(const ModelConfig& config, std::uint64_t seed);
    /// Parameters in layout order with all values zero; used when loading.
    static SegNet empty(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_index(std::string_view name) const;
    /// The tap only selects which decoder map is returned; parameters are
    /// unaffected.
    void set_feature_tap_level(int level);

    ForwardResult<T> forward(const Tensor<T>& batch, Tape<T>* tape = nullptr) const;

    /// Parameter gradients aligned with parameters(). `grad_features` may be
    /// null when only the logits carry a loss.
    std::vector<Tensor<T>> backward(const Tape<T>& tape, const Tensor<T>& grad_logits,
                                    const Tensor<T>* grad_features) const;

    template <typename U> SegNet<U> cast() const;

private:
    struct Unit {
        int conv = -1; // weight, bias, gamma, beta follow consecutively
    };
    struct Layout {
        std::vector<Unit> enc_a, enc_b, dec_up, dec_a, dec_b;
        Unit bott_a, bott_b;
        int head = -1;
    };

    explicit SegNet(ModelConfig config);
    void add_param(std::string name, Shape shape);
    Unit add_unit(const std::string& prefix, int in_ch, int out_ch);

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
    Layout layout_;

    template <typename U> friend class SegNet;
};

using SegModel = SegNet<float>;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kNormEps = 1e-5;

} // namespace mskd::model
