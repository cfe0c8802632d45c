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

#include "mskd/model.hpp"

#include <cmath>
#include <random>

#include "mskd/kernels.hpp"

namespace mskd::model {

void ModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
    if (out_channels < 2) throw ConfigError("model.out_channels must be >= 2, got " + std::to_string(out_channels));
    if (depth < 1 || depth > 8) throw ConfigError("model.depth must be in 1..8, got " + std::to_string(depth));
    if (base_width < 1) throw ConfigError("model.base_width must be >= 1");
    if (feature_tap_level < 0 || feature_tap_level >= depth)
        throw ConfigError("model.feature_level must be in 0.." + std::to_string(depth - 1) + ", got " +
                          std::to_string(feature_tap_level));
}

void ModelConfig::check_input(const Shape& s) const {
    if (s.size() != 4 || s[1] != static_cast<std::size_t>(in_channels))
        throw ShapeError("model input must be B×" + std::to_string(in_channels) + "×H×W, got " + shape_string(s));
    const std::size_t factor = std::size_t{1} << depth;
    if (s[0] == 0 || s[2] == 0 || s[3] == 0 || s[2] % factor || s[3] % factor)
        throw ShapeError("model input " + shape_string(s) + ": H and W must be positive multiples of 2^depth = " +
                         std::to_string(factor));
}

template <typename T> SegNet<T>::SegNet(ModelConfig config) : config_(config) {
    config_.validate();
    const int D = config_.depth;
    layout_.enc_a.resize(static_cast<std::size_t>(D));
    layout_.enc_b.resize(static_cast<std::size_t>(D));
    layout_.dec_up.resize(static_cast<std::size_t>(D));
    layout_.dec_a.resize(static_cast<std::size_t>(D));
    layout_.dec_b.resize(static_cast<std::size_t>(D));
    int in = config_.in_channels;
    for (int d = 0; d < D; ++d) {
        const auto pre = "enc" + std::to_string(d);
        layout_.enc_a[static_cast<std::size_t>(d)] = add_unit(pre + ".conv1", in, config_.channels_at(d));
        layout_.enc_b[static_cast<std::size_t>(d)] = add_unit(pre + ".conv2", config_.channels_at(d), config_.channels_at(d));
        in = config_.channels_at(d);
    }
    layout_.bott_a = add_unit("bottleneck.conv1", in, config_.channels_at(D));
    layout_.bott_b = add_unit("bottleneck.conv2", config_.channels_at(D), config_.channels_at(D));
    for (int d = D - 1; d >= 0; --d) {
        const auto pre = "dec" + std::to_string(d);
        const int c = config_.channels_at(d);
        layout_.dec_up[static_cast<std::size_t>(d)] = add_unit(pre + ".up", config_.channels_at(d + 1), c);
        layout_.dec_a[static_cast<std::size_t>(d)] = add_unit(pre + ".conv1", 2 * c, c);
        layout_.dec_b[static_cast<std::size_t>(d)] = add_unit(pre + ".conv2", c, c);
    }
    layout_.head = static_cast<int>(params_.size());
    add_param("head.weight", Shape{static_cast<std::size_t>(config_.out_channels),
                                   static_cast<std::size_t>(config_.channels_at(0)), 1, 1});
    add_param("head.bias", Shape{static_cast<std::size_t>(config_.out_channels)});
}

template <typename T> void SegNet<T>::add_param(std::string name, Shape shape) {
    params_.push_back({std::move(name), Tensor<T>(std::move(shape))});
}

template <typename T>
typename SegNet<T>::Unit SegNet<T>::add_unit(const std::string& prefix, int in_ch, int out_ch) {
    Unit u{static_cast<int>(params_.size())};
    const auto o = static_cast<std::size_t>(out_ch);
    add_param(prefix + ".weight", Shape{o, static_cast<std::size_t>(in_ch), 3, 3});
    add_param(prefix + ".bias", Shape{o});
    add_param(prefix + ".norm.gamma", Shape{o});
    add_param(prefix + ".norm.beta", Shape{o});
    return u;
}

template <typename T> SegNet<T> SegNet<T>::empty(const ModelConfig& config) { return SegNet(config); }

template <typename T> SegNet<T> SegNet<T>::build(const ModelConfig& config, std::uint64_t seed) {
    SegNet net(config);
    std::mt19937_64 rng(seed);
    for (auto& p : net.params_) {
        const auto& name = p.name;
        if (name.ends_with(".gamma")) {
            p.value.fill(T(1));
        } else if (name.ends_with(".weight")) {
            const auto& s = p.value.shape();
            const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
            // He init for LeakyReLU layers, unit-variance scaling for the head.
            const double stddev = name.starts_with("head") ? std::sqrt(1.0 / fan_in) : std::sqrt(2.0 / fan_in);
            std::normal_distribution<double> dist(0.0, stddev);
            for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
        }
    }
    return net;
}

template <typename T> std::size_t SegNet<T>::parameter_index(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw InvalidInputError("no parameter named '" + std::string(name) + "'");
}

template <typename T> void SegNet<T>::set_feature_tap_level(int level) {
    ModelConfig c = config_;
    c.feature_tap_level = level;
    c.validate();
    config_ = c;
}

template <typename T> ForwardResult<T> SegNet<T>::forward(const Tensor<T>& batch, Tape<T>* tape_out) const {
    config_.check_input(batch.shape());
    Tape<T> local;
    Tape<T>& tape = tape_out ? *tape_out : local;
    tape = Tape<T>{};
    using Kind = typename Tape<T>::Kind;
    const T slope = static_cast<T>(kLeakySlope);
    const T eps = static_cast<T>(kNormEps);

    tape.values.push_back(batch);
    auto push = [&](Tensor<T> v) {
        tape.values.push_back(std::move(v));
        return static_cast<int>(tape.values.size()) - 1;
    };
    auto P = [&](int i) -> const Tensor<T>& { return params_[static_cast<std::size_t>(i)].value; };

    auto conv = [&](int in, int param) {
        int out = push(kernels::conv2d_forward(tape.values[static_cast<std::size_t>(in)], P(param), P(param + 1)));
        tape.ops.push_back({Kind::Conv, param, in, -1, out, -1});
        return out;
    };
    auto norm = [&](int in, int param) {
        Tensor<T> xh, inv;
        Tensor<T> y = kernels::instance_norm_forward(tape.values[static_cast<std::size_t>(in)], P(param), P(param + 1),
                                                     eps, xh, inv);
        tape.norm_normalized.push_back(std::move(xh));
        tape.norm_inv_std.push_back(std::move(inv));
        int out = push(std::move(y));
        tape.ops.push_back({Kind::Norm, param, in, -1, out, static_cast<int>(tape.norm_inv_std.size()) - 1});
        return out;
    };
    auto act = [&](int in) {
        int out = push(kernels::leaky_relu_forward(tape.values[static_cast<std::size_t>(in)], slope));
        tape.ops.push_back({Kind::LeakyRelu, -1, in, -1, out, -1});
        return out;
    };
    auto conv_norm = [&](int in, const Unit& u) { return norm(conv(in, u.conv), u.conv + 2); };
    auto unit = [&](int in, const Unit& u) { return act(conv_norm(in, u)); };

    const int D = config_.depth;
    std::vector<int> skips(static_cast<std::size_t>(D));
    int x = 0;
    for (int d = 0; d < D; ++d) {
        x = unit(x, layout_.enc_a[static_cast<std::size_t>(d)]);
        x = unit(x, layout_.enc_b[static_cast<std::size_t>(d)]);
        skips[static_cast<std::size_t>(d)] = x;
        Tensor<std::uint8_t> argmax;
        Tensor<T> pooled = kernels::maxpool2_forward(tape.values[static_cast<std::size_t>(x)], argmax);
        tape.pool_argmax.push_back(std::move(argmax));
        int out = push(std::move(pooled));
        tape.ops.push_back({Kind::MaxPool, -1, x, -1, out, static_cast<int>(tape.pool_argmax.size()) - 1});
        x = out;
    }
    x = unit(x, layout_.bott_a);
    x = unit(x, layout_.bott_b);
    for (int d = D - 1; d >= 0; --d) {
        const auto di = static_cast<std::size_t>(d);
        int up = push(kernels::upsample2_forward(tape.values[static_cast<std::size_t>(x)]));
        tape.ops.push_back({Kind::Upsample, -1, x, -1, up, -1});
        x = unit(up, layout_.dec_up[di]);
        int cat = push(kernels::concat_channels(tape.values[static_cast<std::size_t>(x)],
                                                tape.values[static_cast<std::size_t>(skips[di])]));
        tape.ops.push_back({Kind::Concat, -1, x, skips[di], cat, -1});
        x = unit(cat, layout_.dec_a[di]);
        x = conv_norm(x, layout_.dec_b[di]);
        if (d == config_.feature_tap_level) tape.features = x;
        x = act(x);
    }
    tape.logits = conv(x, layout_.head);

    ForwardResult<T> result{tape.values[static_cast<std::size_t>(tape.logits)],
                            tape.values[static_cast<std::size_t>(tape.features)]};
    return result;
}

template <typename T>
std::vector<Tensor<T>> SegNet<T>::backward(const Tape<T>& tape, const Tensor<T>& grad_logits,
                                           const Tensor<T>* grad_features) const {
    using Kind = typename Tape<T>::Kind;
    if (tape.logits < 0) throw InvalidInputError("backward: tape holds no forward pass");
    require_shape(grad_logits.shape(), tape.values[static_cast<std::size_t>(tape.logits)].shape(),
                  "backward logits gradient");
    std::vector<Tensor<T>> param_grads;
    param_grads.reserve(params_.size());
    for (const auto& p : params_) param_grads.emplace_back(p.value.shape());

    std::vector<Tensor<T>> grads(tape.values.size());
    auto accumulate = [&](int index, Tensor<T>&& g) {
        auto& slot = grads[static_cast<std::size_t>(index)];
        if (slot.empty()) {
            slot = std::move(g);
            return;
        }
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    };
    accumulate(tape.logits, Tensor<T>(grad_logits));
    if (grad_features) {
        require_shape(grad_features->shape(), tape.values[static_cast<std::size_t>(tape.features)].shape(),
                      "backward feature gradient");
        accumulate(tape.features, Tensor<T>(*grad_features));
    }
    const T slope = static_cast<T>(kLeakySlope);

    for (auto it = tape.ops.rbegin(); it != tape.ops.rend(); ++it) {
        const auto& op = *it;
        Tensor<T> g = std::move(grads[static_cast<std::size_t>(op.out)]);
        if (g.empty()) continue;
        const Tensor<T>& input = tape.values[static_cast<std::size_t>(op.in)];
        switch (op.kind) {
        case Kind::Conv: {
            const auto p = static_cast<std::size_t>(op.param);
            kernels::conv2d_backward_params(g, input, param_grads[p], param_grads[p + 1]);
            if (op.in != 0) accumulate(op.in, kernels::conv2d_backward_input(g, params_[p].value));
            break;
        }
        case Kind::Norm: {
            const auto p = static_cast<std::size_t>(op.param);
            const auto a = static_cast<std::size_t>(op.aux);
            accumulate(op.in, kernels::instance_norm_backward(g, tape.norm_normalized[a], tape.norm_inv_std[a],
                                                              params_[p].value, param_grads[p], param_grads[p + 1]));
            break;
        }
        case Kind::LeakyRelu: accumulate(op.in, kernels::leaky_relu_backward(g, input, slope)); break;
        case Kind::MaxPool:
            accumulate(op.in, kernels::maxpool2_backward(g, tape.pool_argmax[static_cast<std::size_t>(op.aux)]));
            break;
        case Kind::Upsample: accumulate(op.in, kernels::upsample2_backward(g)); break;
        case Kind::Concat: {
            Tensor<T> ga, gb;
            kernels::split_channels(g, input.dim(1), ga, gb);
            accumulate(op.in, std::move(ga));
            accumulate(op.in2, std::move(gb));
            break;
        }
        }
    }
    return param_grads;
}

template <typename T> template <typename U> SegNet<U> SegNet<T>::cast() const {
    SegNet<U> out = SegNet<U>::empty(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params_[i].value = tensor_cast<U>(params_[i].value);
    return out;
}

template class SegNet<float>;
template class SegNet<double>;
template SegNet<double> SegNet<float>::cast<double>() const;
template SegNet<float> SegNet<double>::cast<float>() const;

} // namespace mskd::model
