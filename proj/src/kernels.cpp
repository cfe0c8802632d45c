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

#include "mskd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mskd::kernels {

namespace {

using idx = std::ptrdiff_t;

struct ConvGeometry {
    idx batch, in_ch, out_ch, height, width, k, pad;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& weight) {
    if (in.size() != 4) throw ShapeError("conv2d: input must be B×C×H×W, got " + shape_string(in));
    if (weight.size() != 4 || weight[2] != weight[3] || weight[2] % 2 == 0)
        throw ShapeError("conv2d: weight must be Co×Ci×k×k with odd k, got " + shape_string(weight));
    if (weight[1] != in[1])
        throw ShapeError("conv2d: weight expects " + std::to_string(weight[1]) + " input channels, input has " +
                         std::to_string(in[1]));
    const auto k = static_cast<idx>(weight[2]);
    return {static_cast<idx>(in[0]), static_cast<idx>(in[1]), static_cast<idx>(weight[0]),
            static_cast<idx>(in[2]),  static_cast<idx>(in[3]), k, k / 2};
}

void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4) throw ShapeError(std::string(what) + ": expected B×C×H×W, got " + shape_string(s));
}

template <typename T> using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using Map = Eigen::Map<RowMat<T>>;
template <typename T> using ConstMat = Eigen::Map<const RowMat<T>>;
template <typename T> using ConstVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
using Stride = Eigen::Stride<Eigen::Dynamic, 1>;
template <typename T> using StridedMat = Eigen::Map<RowMat<T>, 0, Stride>;
template <typename T> using ConstStridedMat = Eigen::Map<const RowMat<T>, 0, Stride>;

// Convolutions run as GEMMs over fixed blocks of image rows. Block size
// and GEMM cache blocking are pinned so the arithmetic order is the same
// for every thread count.
idx chunk_rows(idx width) { return std::max<idx>(1, 1024 / std::max<idx>(1, width)); }

[[maybe_unused]] const bool kGemmBlockingPinned = [] {
    Eigen::setCpuCacheSizes(32 * 1024, 1024 * 1024, 8 * 1024 * 1024);
    return true;
}();

// Column matrix (Ci·k·k) × (pixels in rows [r0, r1)) for one item.
template <typename T> void im2col(const T* plane0, const ConvGeometry& g, idx r0, idx r1, T* col) {
    const idx W = g.width, HW = g.height * W, n = (r1 - r0) * W;
    for (idx ic = 0; ic < g.in_ch; ++ic)
        for (idx kh = 0; kh < g.k; ++kh)
            for (idx kw = 0; kw < g.k; ++kw) {
                T* dst = col + ((ic * g.k + kh) * g.k + kw) * n;
                const idx dy = kh - g.pad, dx = kw - g.pad;
                const idx x0 = std::max<idx>(0, -dx), x1 = std::min(W, W - dx);
                for (idx r = r0; r < r1; ++r) {
                    T* drow = dst + (r - r0) * W;
                    const idx sy = r + dy;
                    if (sy < 0 || sy >= g.height) {
                        std::fill(drow, drow + W, T{0});
                        continue;
                    }
                    const T* srow = plane0 + ic * HW + sy * W + dx;
                    std::fill(drow, drow + x0, T{0});
                    std::copy(srow + x0, srow + x1, drow + x0);
                    std::fill(drow + x1, drow + W, T{0});
                }
            }
}

} // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias) {
    const auto g = conv_geometry(in.shape(), weight.shape());
    require_shape(bias.shape(), Shape{static_cast<std::size_t>(g.out_ch)}, "conv2d bias");
    Tensor<T> out(Shape{in.dim(0), weight.dim(0), in.dim(2), in.dim(3)});
    const idx HW = g.height * g.width, depth = g.in_ch * g.k * g.k;
    const auto rows = chunk_rows(g.width);
    const idx chunks = (g.height + rows - 1) / rows;
    const ConstMat<T> wm(weight.data(), g.out_ch, depth);
    const ConstVec<T> bv(bias.data(), g.out_ch);

#pragma omp parallel for collapse(2) schedule(static)
    for (idx b = 0; b < g.batch; ++b) {
        for (idx ch = 0; ch < chunks; ++ch) {
            const idx r0 = ch * rows, r1 = std::min(g.height, r0 + rows), n = (r1 - r0) * g.width;
            std::vector<T> col(static_cast<std::size_t>(depth * n));
            im2col(in.data() + b * g.in_ch * HW, g, r0, r1, col.data());
            StridedMat<T> o(out.data() + b * g.out_ch * HW + r0 * g.width, g.out_ch, n, Stride(HW, 1));
            o.noalias() = wm * ConstMat<T>(col.data(), depth, n);
            o.colwise() += bv;
        }
    }
    return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight) {
    require_rank4(grad_out.shape(), "conv2d_backward_input");
    if (weight.rank() != 4 || weight.dim(0) != grad_out.dim(1))
        throw ShapeError("conv2d_backward_input: weight " + shape_string(weight.shape()) +
                         " incompatible with gradient " + shape_string(grad_out.shape()));
    // The input gradient of a same-padded convolution is the convolution of
    // the output gradient with the spatially flipped, channel-transposed kernel.
    const std::size_t Co = weight.dim(0), Ci = weight.dim(1), K = weight.dim(2);
    Tensor<T> flipped(Shape{Ci, Co, K, K});
    for (std::size_t oc = 0; oc < Co; ++oc)
        for (std::size_t ic = 0; ic < Ci; ++ic)
            for (std::size_t kh = 0; kh < K; ++kh)
                for (std::size_t kw = 0; kw < K; ++kw)
                    flipped[((ic * Co + oc) * K + (K - 1 - kh)) * K + (K - 1 - kw)] =
                        weight[((oc * Ci + ic) * K + kh) * K + kw];
    return conv2d_forward(grad_out, flipped, Tensor<T>(Shape{Ci}));
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& in, Tensor<T>& grad_weight,
                            Tensor<T>& grad_bias) {
    const auto g = conv_geometry(in.shape(), grad_weight.shape());
    require_shape(grad_out.shape(), Shape{in.dim(0), grad_weight.dim(0), in.dim(2), in.dim(3)},
                  "conv2d_backward_params gradient");
    require_shape(grad_bias.shape(), Shape{grad_weight.dim(0)}, "conv2d_backward_params bias");
    const idx HW = g.height * g.width, depth = g.in_ch * g.k * g.k;
    const auto rows = chunk_rows(g.width);
    const idx chunks = (g.height + rows - 1) / rows, tasks = g.batch * chunks;
    const std::size_t wsize = static_cast<std::size_t>(g.out_ch * depth);
    std::vector<T> partial(static_cast<std::size_t>(tasks) * wsize);

#pragma omp parallel for schedule(static)
    for (idx t = 0; t < tasks; ++t) {
        const idx b = t / chunks, ch = t % chunks;
        const idx r0 = ch * rows, r1 = std::min(g.height, r0 + rows), n = (r1 - r0) * g.width;
        std::vector<T> col(static_cast<std::size_t>(depth * n));
        im2col(in.data() + b * g.in_ch * HW, g, r0, r1, col.data());
        const ConstStridedMat<T> go(grad_out.data() + b * g.out_ch * HW + r0 * g.width, g.out_ch, n, Stride(HW, 1));
        Map<T>(partial.data() + static_cast<std::size_t>(t) * wsize, g.out_ch, depth).noalias() =
            go * ConstMat<T>(col.data(), depth, n).transpose();
    }
    // Fixed-order reduction over (item, chunk) so the sum does not depend on
    // how many threads ran the loop above.
    T* gw = grad_weight.data();
#pragma omp parallel for schedule(static)
    for (idx i = 0; i < static_cast<idx>(wsize); ++i) {
        T acc = 0;
        for (idx t = 0; t < tasks; ++t) acc += partial[static_cast<std::size_t>(t) * wsize + static_cast<std::size_t>(i)];
        gw[i] += acc;
    }

    const T* gop = grad_out.data();
#pragma omp parallel for schedule(static)
    for (idx oc = 0; oc < g.out_ch; ++oc) {
        T acc = 0;
        for (idx b = 0; b < g.batch; ++b) {
            const T* gplane = gop + (b * g.out_ch + oc) * HW;
            for (idx i = 0; i < HW; ++i) acc += gplane[i];
        }
        grad_bias[static_cast<std::size_t>(oc)] += acc;
    }
}

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& in, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                Tensor<T>& normalized, Tensor<T>& inv_std) {
    require_rank4(in.shape(), "instance_norm");
    const idx B = static_cast<idx>(in.dim(0)), C = static_cast<idx>(in.dim(1));
    const idx HW = static_cast<idx>(in.dim(2) * in.dim(3));
    require_shape(gamma.shape(), Shape{in.dim(1)}, "instance_norm gamma");
    require_shape(beta.shape(), Shape{in.dim(1)}, "instance_norm beta");
    Tensor<T> out(in.shape());
    normalized = Tensor<T>(in.shape());
    inv_std = Tensor<T>(Shape{in.dim(0), in.dim(1)});

#pragma omp parallel for collapse(2) schedule(static)
    for (idx b = 0; b < B; ++b) {
        for (idx c = 0; c < C; ++c) {
            const T* x = in.data() + (b * C + c) * HW;
            double sum = 0;
#pragma omp simd reduction(+ : sum)
            for (idx i = 0; i < HW; ++i) sum += x[i];
            const double mean = sum / static_cast<double>(HW);
            double sq = 0;
#pragma omp simd reduction(+ : sq)
            for (idx i = 0; i < HW; ++i) sq += (x[i] - mean) * (x[i] - mean);
            const T inv = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(HW) + eps));
            const T m = static_cast<T>(mean);
            const T gm = gamma[static_cast<std::size_t>(c)], bt = beta[static_cast<std::size_t>(c)];
            T* xh = normalized.data() + (b * C + c) * HW;
            T* y = out.data() + (b * C + c) * HW;
            for (idx i = 0; i < HW; ++i) {
                xh[i] = (x[i] - m) * inv;
                y[i] = gm * xh[i] + bt;
            }
            inv_std[static_cast<std::size_t>(b * C + c)] = inv;
        }
    }
    return out;
}

template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized, const Tensor<T>& inv_std,
                                 const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
    require_shape(grad_out.shape(), normalized.shape(), "instance_norm_backward");
    const idx B = static_cast<idx>(grad_out.dim(0)), C = static_cast<idx>(grad_out.dim(1));
    const idx HW = static_cast<idx>(grad_out.dim(2) * grad_out.dim(3));
    Tensor<T> grad_in(grad_out.shape());
    std::vector<T> part_gamma(static_cast<std::size_t>(B * C)), part_beta(static_cast<std::size_t>(B * C));

#pragma omp parallel for collapse(2) schedule(static)
    for (idx b = 0; b < B; ++b) {
        for (idx c = 0; c < C; ++c) {
            const std::size_t bc = static_cast<std::size_t>(b * C + c);
            const T* dy = grad_out.data() + bc * HW;
            const T* xh = normalized.data() + bc * HW;
            T sum_dy = 0, sum_dy_xh = 0;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xh)
            for (idx i = 0; i < HW; ++i) {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
            part_beta[bc] = sum_dy;
            part_gamma[bc] = sum_dy_xh;
            const T n = static_cast<T>(HW);
            const T scale = gamma[static_cast<std::size_t>(c)] * inv_std[bc];
            const T mean_dy = sum_dy / n, mean_dy_xh = sum_dy_xh / n;
            T* dx = grad_in.data() + bc * HW;
            for (idx i = 0; i < HW; ++i) dx[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
        }
    }
    for (idx c = 0; c < C; ++c) {
        for (idx b = 0; b < B; ++b) {
            grad_gamma[static_cast<std::size_t>(c)] += part_gamma[static_cast<std::size_t>(b * C + c)];
            grad_beta[static_cast<std::size_t>(c)] += part_beta[static_cast<std::size_t>(b * C + c)];
        }
    }
    return grad_in;
}

template <typename T> Tensor<T> leaky_relu_forward(const Tensor<T>& in, T slope) {
    Tensor<T> out(in.shape());
    const idx n = static_cast<idx>(in.size());
    const T* x = in.data();
    T* y = out.data();
#pragma omp parallel for simd schedule(static)
    for (idx i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
    return out;
}

template <typename T> Tensor<T> leaky_relu_backward(const Tensor<T>& grad_out, const Tensor<T>& in, T slope) {
    require_shape(grad_out.shape(), in.shape(), "leaky_relu_backward");
    Tensor<T> grad_in(in.shape());
    const idx n = static_cast<idx>(in.size());
    const T* x = in.data();
    const T* g = grad_out.data();
    T* d = grad_in.data();
#pragma omp parallel for simd schedule(static)
    for (idx i = 0; i < n; ++i) d[i] = x[i] > T(0) ? g[i] : slope * g[i];
    return grad_in;
}

template <typename T> Tensor<T> maxpool2_forward(const Tensor<T>& in, Tensor<std::uint8_t>& argmax) {
    require_rank4(in.shape(), "maxpool2");
    if (in.dim(2) % 2 || in.dim(3) % 2) throw ShapeError("maxpool2: odd spatial shape " + shape_string(in.shape()));
    const idx planes = static_cast<idx>(in.dim(0) * in.dim(1));
    const idx H = static_cast<idx>(in.dim(2)), W = static_cast<idx>(in.dim(3)), h = H / 2, w = W / 2;
    Tensor<T> out(Shape{in.dim(0), in.dim(1), in.dim(2) / 2, in.dim(3) / 2});
    argmax = Tensor<std::uint8_t>(out.shape());

#pragma omp parallel for schedule(static)
    for (idx p = 0; p < planes; ++p) {
        const T* x = in.data() + p * H * W;
        T* y = out.data() + p * h * w;
        std::uint8_t* a = argmax.data() + p * h * w;
        for (idx r = 0; r < h; ++r) {
            for (idx c = 0; c < w; ++c) {
                const T* top = x + 2 * r * W + 2 * c;
                const T v[4] = {top[0], top[1], top[W], top[W + 1]};
                std::uint8_t best = 0;
                for (std::uint8_t j = 1; j < 4; ++j)
                    if (v[j] > v[best]) best = j;
                y[r * w + c] = v[best];
                a[r * w + c] = best;
            }
        }
    }
    return out;
}

template <typename T> Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const Tensor<std::uint8_t>& argmax) {
    require_shape(grad_out.shape(), argmax.shape(), "maxpool2_backward");
    const idx planes = static_cast<idx>(grad_out.dim(0) * grad_out.dim(1));
    const idx h = static_cast<idx>(grad_out.dim(2)), w = static_cast<idx>(grad_out.dim(3)), W = 2 * w;
    Tensor<T> grad_in(Shape{grad_out.dim(0), grad_out.dim(1), grad_out.dim(2) * 2, grad_out.dim(3) * 2});

#pragma omp parallel for schedule(static)
    for (idx p = 0; p < planes; ++p) {
        const T* g = grad_out.data() + p * h * w;
        const std::uint8_t* a = argmax.data() + p * h * w;
        T* d = grad_in.data() + p * 4 * h * w;
        for (idx r = 0; r < h; ++r)
            for (idx c = 0; c < w; ++c) {
                const std::uint8_t j = a[r * w + c];
                d[(2 * r + j / 2) * W + 2 * c + j % 2] = g[r * w + c];
            }
    }
    return grad_in;
}

template <typename T> Tensor<T> upsample2_forward(const Tensor<T>& in) {
    require_rank4(in.shape(), "upsample2");
    const idx planes = static_cast<idx>(in.dim(0) * in.dim(1));
    const idx h = static_cast<idx>(in.dim(2)), w = static_cast<idx>(in.dim(3)), W = 2 * w;
    Tensor<T> out(Shape{in.dim(0), in.dim(1), in.dim(2) * 2, in.dim(3) * 2});

#pragma omp parallel for schedule(static)
    for (idx p = 0; p < planes; ++p) {
        const T* x = in.data() + p * h * w;
        T* y = out.data() + p * 4 * h * w;
        for (idx r = 0; r < 2 * h; ++r)
            for (idx c = 0; c < W; ++c) y[r * W + c] = x[(r / 2) * w + c / 2];
    }
    return out;
}

template <typename T> Tensor<T> upsample2_backward(const Tensor<T>& grad_out) {
    require_rank4(grad_out.shape(), "upsample2_backward");
    const idx planes = static_cast<idx>(grad_out.dim(0) * grad_out.dim(1));
    const idx H = static_cast<idx>(grad_out.dim(2)), W = static_cast<idx>(grad_out.dim(3)), h = H / 2, w = W / 2;
    Tensor<T> grad_in(Shape{grad_out.dim(0), grad_out.dim(1), grad_out.dim(2) / 2, grad_out.dim(3) / 2});

#pragma omp parallel for schedule(static)
    for (idx p = 0; p < planes; ++p) {
        const T* g = grad_out.data() + p * H * W;
        T* d = grad_in.data() + p * h * w;
        for (idx r = 0; r < h; ++r)
            for (idx c = 0; c < w; ++c) {
                const T* top = g + 2 * r * W + 2 * c;
                d[r * w + c] = (top[0] + top[1]) + (top[W] + top[W + 1]);
            }
    }
    return grad_in;
}

template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank4(a.shape(), "concat_channels");
    require_rank4(b.shape(), "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    const std::size_t B = a.dim(0), na = a.size() / B, nb = b.size() / B;
    Tensor<T> out(Shape{B, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(a.data() + i * na, na, out.data() + i * (na + nb));
        std::copy_n(b.data() + i * nb, nb, out.data() + i * (na + nb) + na);
    }
    return out;
}

template <typename T>
void split_channels(const Tensor<T>& grad, std::size_t channels_a, Tensor<T>& grad_a, Tensor<T>& grad_b) {
    require_rank4(grad.shape(), "split_channels");
    if (channels_a > grad.dim(1)) throw ShapeError("split_channels: split point beyond channel count");
    const std::size_t B = grad.dim(0), plane = grad.dim(2) * grad.dim(3);
    const std::size_t na = channels_a * plane, nb = (grad.dim(1) - channels_a) * plane;
    grad_a = Tensor<T>(Shape{B, channels_a, grad.dim(2), grad.dim(3)});
    grad_b = Tensor<T>(Shape{B, grad.dim(1) - channels_a, grad.dim(2), grad.dim(3)});
    for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(grad.data() + i * (na + nb), na, grad_a.data() + i * na);
        std::copy_n(grad.data() + i * (na + nb) + na, nb, grad_b.data() + i * nb);
    }
}

namespace reference {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, const Tensor<T>& bias) {
    const auto g = conv_geometry(in.shape(), weight.shape());
    Tensor<T> out(Shape{in.dim(0), weight.dim(0), in.dim(2), in.dim(3)});
    for (idx b = 0; b < g.batch; ++b)
        for (idx oc = 0; oc < g.out_ch; ++oc)
            for (idx y = 0; y < g.height; ++y)
                for (idx x = 0; x < g.width; ++x) {
                    T acc = bias[static_cast<std::size_t>(oc)];
                    for (idx ic = 0; ic < g.in_ch; ++ic)
                        for (idx kh = 0; kh < g.k; ++kh)
                            for (idx kw = 0; kw < g.k; ++kw) {
                                const idx sy = y + kh - g.pad, sx = x + kw - g.pad;
                                if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) continue;
                                acc += weight[static_cast<std::size_t>(((oc * g.in_ch + ic) * g.k + kh) * g.k + kw)] *
                                       in[static_cast<std::size_t>(((b * g.in_ch + ic) * g.height + sy) * g.width + sx)];
                            }
                    out[static_cast<std::size_t>(((b * g.out_ch + oc) * g.height + y) * g.width + x)] = acc;
                }
    return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight) {
    const idx B = static_cast<idx>(grad_out.dim(0)), Co = static_cast<idx>(weight.dim(0)),
              Ci = static_cast<idx>(weight.dim(1)), K = static_cast<idx>(weight.dim(2)), pad = K / 2;
    const idx H = static_cast<idx>(grad_out.dim(2)), W = static_cast<idx>(grad_out.dim(3));
    Tensor<T> grad_in(Shape{grad_out.dim(0), weight.dim(1), grad_out.dim(2), grad_out.dim(3)});
    for (idx b = 0; b < B; ++b)
        for (idx oc = 0; oc < Co; ++oc)
            for (idx y = 0; y < H; ++y)
                for (idx x = 0; x < W; ++x) {
                    const T g = grad_out[static_cast<std::size_t>(((b * Co + oc) * H + y) * W + x)];
                    for (idx ic = 0; ic < Ci; ++ic)
                        for (idx kh = 0; kh < K; ++kh)
                            for (idx kw = 0; kw < K; ++kw) {
                                const idx sy = y + kh - pad, sx = x + kw - pad;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                grad_in[static_cast<std::size_t>(((b * Ci + ic) * H + sy) * W + sx)] +=
                                    g * weight[static_cast<std::size_t>(((oc * Ci + ic) * K + kh) * K + kw)];
                            }
                }
    return grad_in;
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& grad_out, const Tensor<T>& in, Tensor<T>& grad_weight,
                            Tensor<T>& grad_bias) {
    const auto g = conv_geometry(in.shape(), grad_weight.shape());
    for (idx b = 0; b < g.batch; ++b)
        for (idx oc = 0; oc < g.out_ch; ++oc)
            for (idx y = 0; y < g.height; ++y)
                for (idx x = 0; x < g.width; ++x) {
                    const T go = grad_out[static_cast<std::size_t>(((b * g.out_ch + oc) * g.height + y) * g.width + x)];
                    grad_bias[static_cast<std::size_t>(oc)] += go;
                    for (idx ic = 0; ic < g.in_ch; ++ic)
                        for (idx kh = 0; kh < g.k; ++kh)
                            for (idx kw = 0; kw < g.k; ++kw) {
                                const idx sy = y + kh - g.pad, sx = x + kw - g.pad;
                                if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) continue;
                                grad_weight[static_cast<std::size_t>(((oc * g.in_ch + ic) * g.k + kh) * g.k + kw)] +=
                                    go * in[static_cast<std::size_t>(((b * g.in_ch + ic) * g.height + sy) * g.width + sx)];
                            }
                }
}

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& in, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                                Tensor<T>& normalized, Tensor<T>& inv_std) {
    const std::size_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
    Tensor<T> out(in.shape());
    normalized = Tensor<T>(in.shape());
    inv_std = Tensor<T>(Shape{B, C});
    for (std::size_t p = 0; p < B * C; ++p) {
        const std::size_t c = p % C;
        long double mean = 0, var = 0;
        for (std::size_t i = 0; i < HW; ++i) mean += in[p * HW + i];
        mean /= HW;
        for (std::size_t i = 0; i < HW; ++i) var += (in[p * HW + i] - mean) * (in[p * HW + i] - mean);
        var /= HW;
        const long double inv = 1.0L / std::sqrt(var + eps);
        inv_std[p] = static_cast<T>(inv);
        for (std::size_t i = 0; i < HW; ++i) {
            normalized[p * HW + i] = static_cast<T>((in[p * HW + i] - mean) * inv);
            out[p * HW + i] = gamma[c] * normalized[p * HW + i] + beta[c];
        }
    }
    return out;
}

template <typename T>
Tensor<T> instance_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized, const Tensor<T>& inv_std,
                                 const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
    // Direct chain rule through mean and variance, no algebraic shortcut.
    const std::size_t B = grad_out.dim(0), C = grad_out.dim(1), HW = grad_out.dim(2) * grad_out.dim(3);
    Tensor<T> grad_in(grad_out.shape());
    for (std::size_t p = 0; p < B * C; ++p) {
        const std::size_t c = p % C;
        const long double inv = inv_std[p], n = static_cast<long double>(HW);
        long double dvar = 0, dmean = 0, sum_xc = 0;
        for (std::size_t i = 0; i < HW; ++i) {
            grad_gamma[c] += grad_out[p * HW + i] * normalized[p * HW + i];
            grad_beta[c] += grad_out[p * HW + i];
            const long double dxh = grad_out[p * HW + i] * static_cast<long double>(gamma[c]);
            const long double xc = normalized[p * HW + i] / inv;
            dvar += dxh * xc * -0.5L * inv * inv * inv;
            dmean += -dxh * inv;
            sum_xc += xc;
        }
        dmean += dvar * -2.0L * sum_xc / n;
        for (std::size_t i = 0; i < HW; ++i) {
            const long double dxh = grad_out[p * HW + i] * static_cast<long double>(gamma[c]);
            const long double xc = normalized[p * HW + i] / inv;
            grad_in[p * HW + i] = static_cast<T>(dxh * inv + dvar * 2.0L * xc / n + dmean / n);
        }
    }
    return grad_in;
}

template <typename T> Tensor<T> maxpool2_forward(const Tensor<T>& in, Tensor<std::uint8_t>& argmax) {
    const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    Tensor<T> out(Shape{B, C, H / 2, W / 2});
    argmax = Tensor<std::uint8_t>(out.shape());
    for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t y = 0; y < H / 2; ++y)
            for (std::size_t x = 0; x < W / 2; ++x) {
                std::uint8_t best = 0;
                T best_v = in[(p * H + 2 * y) * W + 2 * x];
                for (std::uint8_t j = 1; j < 4; ++j) {
                    const T v = in[(p * H + 2 * y + j / 2) * W + 2 * x + j % 2];
                    if (v > best_v) {
                        best_v = v;
                        best = j;
                    }
                }
                out[(p * (H / 2) + y) * (W / 2) + x] = best_v;
                argmax[(p * (H / 2) + y) * (W / 2) + x] = best;
            }
    return out;
}

} // namespace reference

#define MSKD_INSTANTIATE_KERNELS(T)                                                                            \
    template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template void conv2d_backward_params<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&);       \
    template Tensor<T> instance_norm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,       \
                                                Tensor<T>&, Tensor<T>&);                                       \
    template Tensor<T> instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                                 const Tensor<T>&, Tensor<T>&, Tensor<T>&);                    \
    template Tensor<T> leaky_relu_forward<T>(const Tensor<T>&, T);                                             \
    template Tensor<T> leaky_relu_backward<T>(const Tensor<T>&, const Tensor<T>&, T);                          \
    template Tensor<T> maxpool2_forward<T>(const Tensor<T>&, Tensor<std::uint8_t>&);                           \
    template Tensor<T> maxpool2_backward<T>(const Tensor<T>&, const Tensor<std::uint8_t>&);                    \
    template Tensor<T> upsample2_forward<T>(const Tensor<T>&);                                                 \
    template Tensor<T> upsample2_backward<T>(const Tensor<T>&);                                                \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                 \
    template void split_channels<T>(const Tensor<T>&, std::size_t, Tensor<T>&, Tensor<T>&);                    \
    template Tensor<T> reference::conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> reference::conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&);                \
    template void reference::conv2d_backward_params<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&,         \
                                                       Tensor<T>&);                                            \
    template Tensor<T> reference::instance_norm_forward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                                           const Tensor<T>&, T, Tensor<T>&, Tensor<T>&);       \
    template Tensor<T> reference::instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                                            const Tensor<T>&, const Tensor<T>&, Tensor<T>&,    \
                                                            Tensor<T>&);                                       \
    template Tensor<T> reference::maxpool2_forward<T>(const Tensor<T>&, Tensor<std::uint8_t>&);

MSKD_INSTANTIATE_KERNELS(float)
MSKD_INSTANTIATE_KERNELS(double)
#undef MSKD_INSTANTIATE_KERNELS

} // namespace mskd::kernels
