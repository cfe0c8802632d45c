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

// Parallel kernels against the serial reference loops on the layer shapes
// of the default 64×64 network.

#include <benchmark/benchmark.h>

#include <random>

#include "mskd/kernels.hpp"
#include "mskd/model.hpp"

using namespace mskd;

namespace {

Tensor<float> random(Shape s, std::uint64_t seed) {
    Tensor<float> t(std::move(s));
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n;
    for (auto& v : t.values()) v = n(rng);
    return t;
}

struct ConvCase {
    Tensor<float> in, weight, bias, grad_out;
};

ConvCase conv_case(const benchmark::State& state) {
    const auto B = std::size_t(4), C = static_cast<std::size_t>(state.range(0)), H = static_cast<std::size_t>(state.range(1));
    ConvCase c{random(Shape{B, C, H, H}, 1), random(Shape{C, C, 3, 3}, 2), random(Shape{C}, 3), {}};
    c.grad_out = random(Shape{B, C, H, H}, 4);
    return c;
}

void conv_args(benchmark::internal::Benchmark* b) {
    b->Args({16, 64})->Args({32, 32})->Args({64, 16})->Unit(benchmark::kMillisecond);
}

void BM_ConvForward(benchmark::State& state) {
    const auto c = conv_case(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_forward(c.in, c.weight, c.bias));
}
void BM_ConvForwardReference(benchmark::State& state) {
    const auto c = conv_case(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::conv2d_forward(c.in, c.weight, c.bias));
}
void BM_ConvBackward(benchmark::State& state) {
    const auto c = conv_case(state);
    for (auto _ : state) {
        Tensor<float> gw(c.weight.shape()), gb(c.bias.shape());
        kernels::conv2d_backward_params(c.grad_out, c.in, gw, gb);
        benchmark::DoNotOptimize(kernels::conv2d_backward_input(c.grad_out, c.weight));
    }
}
void BM_ConvBackwardReference(benchmark::State& state) {
    const auto c = conv_case(state);
    for (auto _ : state) {
        Tensor<float> gw(c.weight.shape()), gb(c.bias.shape());
        kernels::reference::conv2d_backward_params(c.grad_out, c.in, gw, gb);
        benchmark::DoNotOptimize(kernels::reference::conv2d_backward_input(c.grad_out, c.weight));
    }
}

void BM_InstanceNorm(benchmark::State& state) {
    const auto in = random(Shape{4, 16, 64, 64}, 5), g = random(Shape{16}, 6), b = random(Shape{16}, 7);
    Tensor<float> n, inv;
    for (auto _ : state) benchmark::DoNotOptimize(kernels::instance_norm_forward(in, g, b, 1e-5f, n, inv));
}
void BM_InstanceNormReference(benchmark::State& state) {
    const auto in = random(Shape{4, 16, 64, 64}, 5), g = random(Shape{16}, 6), b = random(Shape{16}, 7);
    Tensor<float> n, inv;
    for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::instance_norm_forward(in, g, b, 1e-5f, n, inv));
}

void BM_ModelStep(benchmark::State& state) {
    model::ModelConfig cfg;
    cfg.out_channels = 4;
    cfg.base_width = static_cast<int>(state.range(0));
    const auto net = model::SegModel::build(cfg, 1);
    const auto x = random(Shape{4, 1, 64, 64}, 8);
    for (auto _ : state) {
        model::Tape<float> tape;
        const auto r = net.forward(x, &tape);
        benchmark::DoNotOptimize(net.backward(tape, r.logits, nullptr));
    }
}

} // namespace

BENCHMARK(BM_ConvForward)->Apply(conv_args);
BENCHMARK(BM_ConvForwardReference)->Apply(conv_args);
BENCHMARK(BM_ConvBackward)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardReference)->Apply(conv_args);
BENCHMARK(BM_InstanceNorm)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InstanceNormReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ModelStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
