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

#include "mskd/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace mskd::losses {

namespace {

void require_chw(const Tensor<double>& t, const char* what) {
    if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected C×H×W, got " + shape_string(t.shape()));
}

void require_mask_fits(const Mask& mask, const Tensor<double>& t, const char* what) {
    require_shape(mask.shape(), Shape{t.dim(1), t.dim(2)}, what);
}

void require_finite(const Tensor<double>& t, const char* what) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw InvalidInputError(std::string(what) + ": non-finite input value");
}

// Descending order of the channel vector at one pixel; ties keep channel
// order. Insertion sort on a gathered copy: C is small.
void sort_order(const Tensor<double>& t, std::size_t pixel, std::vector<std::size_t>& order,
                std::vector<double>& values) {
    const std::size_t C = t.dim(0), HW = t.dim(1) * t.dim(2);
    order.resize(C);
    values.resize(C);
    for (std::size_t c = 0; c < C; ++c) values[c] = t[c * HW + pixel];
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t j = c;
        for (; j > 0 && values[order[j - 1]] < values[c]; --j) order[j] = order[j - 1];
        order[j] = c;
    }
}

} // namespace

void LossWeights::validate() const {
    if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0 || lambda2 < 0)
        throw ConfigError("loss weights must be finite and non-negative (lambda1=" + std::to_string(lambda1) +
                          ", lambda2=" + std::to_string(lambda2) + ")");
}

Tensor<double> softmax_channels(const Tensor<double>& logits) {
    require_chw(logits, "softmax_channels");
    if (logits.dim(0) < 2) throw ShapeError("softmax_channels: need at least 2 channels");
    require_finite(logits, "softmax_channels");
    const std::size_t C = logits.dim(0), HW = logits.dim(1) * logits.dim(2);
    Tensor<double> out(logits.shape());
    for (std::size_t i = 0; i < HW; ++i) {
        double peak = logits[i];
        for (std::size_t c = 1; c < C; ++c) peak = std::max(peak, logits[c * HW + i]);
        double sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            out[c * HW + i] = std::exp(logits[c * HW + i] - peak);
            sum += out[c * HW + i];
        }
        for (std::size_t c = 0; c < C; ++c) out[c * HW + i] /= sum;
    }
    return out;
}

Tensor<double> transfer_logits(const Tensor<double>& teacher_probs, int organ, int num_organs) {
    require_chw(teacher_probs, "transfer_logits");
    if (teacher_probs.dim(0) != 2)
        throw ShapeError("transfer_logits: teacher probabilities must have 2 channels, got " +
                         std::to_string(teacher_probs.dim(0)));
    if (num_organs < 1 || organ < 1 || organ > num_organs)
        throw InvalidInputError("transfer_logits: organ index " + std::to_string(organ) + " outside 1.." +
                                std::to_string(num_organs));
    const std::size_t HW = teacher_probs.dim(1) * teacher_probs.dim(2);
    Tensor<double> out(Shape{static_cast<std::size_t>(num_organs) + 1, teacher_probs.dim(1), teacher_probs.dim(2)});
    std::copy_n(teacher_probs.data(), HW, out.data());
    std::copy_n(teacher_probs.data() + HW, HW, out.data() + static_cast<std::size_t>(organ) * HW);
    return out;
}

Tensor<double> background_signal(std::span<const Tensor<double>> transferred) {
    if (transferred.empty()) throw InvalidInputError("background_signal: no teacher signals");
    Tensor<double> out(transferred.front().shape());
    for (const auto& t : transferred) {
        require_shape(t.shape(), out.shape(), "background_signal");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
    }
    const double k = static_cast<double>(transferred.size());
    for (auto& v : out.values()) v /= k;
    return out;
}

double masked_kl(const Tensor<double>& target, const Tensor<double>& student, const Mask& mask) {
    require_chw(target, "masked_kl");
    require_shape(student.shape(), target.shape(), "masked_kl student");
    require_mask_fits(mask, target, "masked_kl mask");
    const std::size_t C = target.dim(0), HW = target.dim(1) * target.dim(2);
    for (double v : target.values())
        if (!(v >= 0)) throw InvalidInputError("masked_kl: target probability < 0 or NaN");
    double sum = 0;
    for (std::size_t i = 0; i < HW; ++i) {
        if (!mask[i]) continue;
        double pixel = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const double p = target[c * HW + i];
            if (p == 0) continue;
            pixel += p * (std::log(p) - std::log(std::max(student[c * HW + i], kProbFloor)));
        }
        sum += pixel;
    }
    return sum / static_cast<double>(HW);
}

void masked_kl_grad(const Tensor<double>& target, const Tensor<double>& student_probs, const Mask& mask,
                    double scale, Tensor<double>& grad_logits) {
    require_shape(student_probs.shape(), target.shape(), "masked_kl_grad");
    require_shape(grad_logits.shape(), target.shape(), "masked_kl_grad gradient");
    require_mask_fits(mask, target, "masked_kl_grad mask");
    const std::size_t C = target.dim(0), HW = target.dim(1) * target.dim(2);
    const double s = scale / static_cast<double>(HW);
    for (std::size_t i = 0; i < HW; ++i) {
        if (!mask[i]) continue;
        double mass = 0;
        for (std::size_t c = 0; c < C; ++c) mass += target[c * HW + i];
        for (std::size_t c = 0; c < C; ++c)
            grad_logits[c * HW + i] += s * (student_probs[c * HW + i] * mass - target[c * HW + i]);
    }
}

double organ_logit_loss(const Tensor<double>& teacher_probs, const Tensor<double>& student_probs,
                        const Mask& organ_mask, int organ, int num_organs) {
    return masked_kl(transfer_logits(teacher_probs, organ, num_organs), student_probs, organ_mask);
}

double background_logit_loss(std::span<const Tensor<double>> teacher_probs, const Tensor<double>& student_probs,
                             const Mask& background_mask, int num_organs) {
    if (teacher_probs.size() != static_cast<std::size_t>(num_organs))
        throw InvalidInputError("background_logit_loss: " + std::to_string(teacher_probs.size()) +
                                " teachers for " + std::to_string(num_organs) + " organs");
    std::vector<Tensor<double>> transferred;
    for (int k = 1; k <= num_organs; ++k)
        transferred.push_back(transfer_logits(teacher_probs[static_cast<std::size_t>(k - 1)], k, num_organs));
    return masked_kl(background_signal(transferred), student_probs, background_mask);
}

double sorted_feature_loss(const Tensor<double>& teacher_features, const Tensor<double>& student_features,
                           const Mask& mask) {
    require_chw(teacher_features, "sorted_feature_loss");
    require_chw(student_features, "sorted_feature_loss");
    if (teacher_features.dim(0) != student_features.dim(0))
        throw ShapeError("sorted_feature_loss: teacher tap has " + std::to_string(teacher_features.dim(0)) +
                         " channels, student tap has " + std::to_string(student_features.dim(0)));
    require_shape(student_features.shape(), teacher_features.shape(), "sorted_feature_loss");
    require_mask_fits(mask, teacher_features, "sorted_feature_loss mask");
    const std::size_t C = teacher_features.dim(0), HW = teacher_features.dim(1) * teacher_features.dim(2);
    std::vector<std::size_t> t_order, s_order;
    std::vector<double> scratch;
    double sum = 0;
    for (std::size_t i = 0; i < HW; ++i) {
        if (!mask[i]) continue;
        sort_order(teacher_features, i, t_order, scratch);
        sort_order(student_features, i, s_order, scratch);
        double pixel = 0;
        for (std::size_t j = 0; j < C; ++j) {
            const double p = teacher_features[t_order[j] * HW + i];
            if (p < 0) throw InvalidInputError("sorted_feature_loss: negative teacher feature probability");
            if (p == 0) continue;
            const double q = std::max(student_features[s_order[j] * HW + i], kProbFloor);
            pixel += p * (std::log(p) - std::log(q));
        }
        sum += pixel;
    }
    return sum / static_cast<double>(HW);
}

void sorted_feature_grad(const Tensor<double>& teacher_features, const Tensor<double>& student_features,
                         const Mask& mask, double scale, Tensor<double>& grad_features) {
    require_shape(student_features.shape(), teacher_features.shape(), "sorted_feature_grad");
    require_shape(grad_features.shape(), teacher_features.shape(), "sorted_feature_grad gradient");
    require_mask_fits(mask, teacher_features, "sorted_feature_grad mask");
    const std::size_t C = teacher_features.dim(0), HW = teacher_features.dim(1) * teacher_features.dim(2);
    const double s = scale / static_cast<double>(HW);
    std::vector<std::size_t> t_order, s_order;
    std::vector<double> scratch;
    for (std::size_t i = 0; i < HW; ++i) {
        if (!mask[i]) continue;
        sort_order(teacher_features, i, t_order, scratch);
        sort_order(student_features, i, s_order, scratch);
        // The student channel holding rank j is matched with the teacher's
        // rank-j value; away from ties this is a softmax KL against a
        // permuted target.
        double mass = 0;
        for (std::size_t j = 0; j < C; ++j) mass += teacher_features[t_order[j] * HW + i];
        for (std::size_t j = 0; j < C; ++j) {
            const std::size_t c = s_order[j];
            grad_features[c * HW + i] +=
                s * (student_features[c * HW + i] * mass - teacher_features[t_order[j] * HW + i]);
        }
    }
}

LossBreakdown total_loss(std::vector<double> per_organ_logit, double background_logit,
                         std::vector<double> per_organ_feature, const LossWeights& weights) {
    weights.validate();
    auto check = [](double v, const char* what) {
        if (!std::isfinite(v) || v < 0)
            throw InvalidInputError(std::string("total_loss: ") + what + " component is negative or non-finite");
    };
    LossBreakdown out;
    double organ_sum = 0, feature_sum = 0;
    for (double v : per_organ_logit) check(v, "organ logit"), organ_sum += v;
    check(background_logit, "background logit");
    for (double v : per_organ_feature) check(v, "feature"), feature_sum += v;
    out.total = organ_sum + weights.lambda1 * background_logit + weights.lambda2 * feature_sum;
    out.per_organ_logit = std::move(per_organ_logit);
    out.background_logit = background_logit;
    out.per_organ_feature = std::move(per_organ_feature);
    return out;
}

double seg_loss_dice_ce(const Tensor<double>& logits, const LabelMap& labels, Tensor<double>* grad_logits) {
    const Tensor<double> probs = softmax_channels(logits);
    require_mask_fits(labels, logits, "seg_loss_dice_ce labels");
    const std::size_t C = logits.dim(0), HW = logits.dim(1) * logits.dim(2);
    for (std::size_t i = 0; i < HW; ++i)
        if (labels[i] >= C)
            throw InvalidInputError("seg_loss_dice_ce: label " + std::to_string(labels[i]) + " outside 0.." +
                                    std::to_string(C - 1));
    const double n = static_cast<double>(HW);

    double ce = 0;
    for (std::size_t i = 0; i < HW; ++i) ce -= std::log(std::max(probs[labels[i] * HW + i], kProbFloor));
    ce /= n;

    std::vector<double> inter(C, 0.0), denom(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
            const double p = probs[c * HW + i];
            const double y = labels[i] == c ? 1.0 : 0.0;
            inter[c] += p * y;
            denom[c] += p + y;
        }
    double dice = 0;
    for (std::size_t c = 0; c < C; ++c)
        dice += 1.0 - (2.0 * inter[c] + kDiceSmooth) / (denom[c] + kDiceSmooth);
    dice /= static_cast<double>(C);

    if (grad_logits) {
        *grad_logits = Tensor<double>(logits.shape());
        std::vector<double> g(C);
        for (std::size_t i = 0; i < HW; ++i) {
            // dL/dp_c, then through the softmax Jacobian.
            double dot = 0;
            for (std::size_t c = 0; c < C; ++c) {
                const double y = labels[i] == c ? 1.0 : 0.0;
                const double d = denom[c] + kDiceSmooth;
                g[c] = (-2.0 * y / d + (2.0 * inter[c] + kDiceSmooth) / (d * d)) / static_cast<double>(C);
                dot += probs[c * HW + i] * g[c];
            }
            for (std::size_t c = 0; c < C; ++c) {
                const double p = probs[c * HW + i];
                const double y = labels[i] == c ? 1.0 : 0.0;
                (*grad_logits)[c * HW + i] = p * (g[c] - dot) + (p - y) / n;
            }
        }
    }
    return dice + ce;
}

DistillTargets make_distill_targets(std::span<const Tensor<double>> teacher_logits,
                                    std::span<const Tensor<double>> teacher_features, int feature_level) {
    if (teacher_logits.empty()) throw InvalidInputError("make_distill_targets: no teachers");
    if (teacher_features.size() != teacher_logits.size())
        throw InvalidInputError("make_distill_targets: feature taps for " + std::to_string(teacher_features.size()) +
                                " of " + std::to_string(teacher_logits.size()) + " teachers");
    DistillTargets t;
    t.masks = masks::build_region_masks(teacher_logits, feature_level);
    for (const auto& l : teacher_logits) t.teacher_probs.push_back(softmax_channels(l));
    for (const auto& f : teacher_features) t.teacher_feature_probs.push_back(softmax_channels(f));
    return t;
}

LossBreakdown distillation_objective(const DistillTargets& targets, const Tensor<double>& student_logits,
                                     const Tensor<double>& student_features, const LossWeights& weights,
                                     ObjectiveGradient* grad) {
    const int K = static_cast<int>(targets.teacher_probs.size());
    require_chw(student_logits, "distillation_objective logits");
    if (student_logits.dim(0) != static_cast<std::size_t>(K) + 1)
        throw ShapeError("distillation_objective: student emits " + std::to_string(student_logits.dim(0)) +
                         " classes for " + std::to_string(K) + " teachers");
    const Tensor<double> student_probs = softmax_channels(student_logits);
    const Tensor<double> student_feat_probs = softmax_channels(student_features);

    std::vector<Tensor<double>> transferred;
    transferred.reserve(static_cast<std::size_t>(K));
    for (int k = 1; k <= K; ++k)
        transferred.push_back(transfer_logits(targets.teacher_probs[static_cast<std::size_t>(k - 1)], k, K));
    const Tensor<double> bg_target = background_signal(transferred);

    std::vector<double> organ(static_cast<std::size_t>(K)), feature(static_cast<std::size_t>(K));
    for (std::size_t k = 0; k < organ.size(); ++k) {
        organ[k] = masked_kl(transferred[k], student_probs, targets.masks.organ_masks[k]);
        feature[k] = sorted_feature_loss(targets.teacher_feature_probs[k], student_feat_probs,
                                         targets.masks.downsampled[k]);
    }
    const double background = masked_kl(bg_target, student_probs, targets.masks.background_mask);
    LossBreakdown out = total_loss(std::move(organ), background, std::move(feature), weights);

    if (grad) {
        grad->logits = Tensor<double>(student_logits.shape());
        grad->features = Tensor<double>(student_features.shape());
        for (std::size_t k = 0; k < transferred.size(); ++k) {
            masked_kl_grad(transferred[k], student_probs, targets.masks.organ_masks[k], 1.0, grad->logits);
            if (weights.lambda2 != 0)
                sorted_feature_grad(targets.teacher_feature_probs[k], student_feat_probs,
                                    targets.masks.downsampled[k], weights.lambda2, grad->features);
        }
        if (weights.lambda1 != 0)
            masked_kl_grad(bg_target, student_probs, targets.masks.background_mask, weights.lambda1, grad->logits);
    }
    return out;
}

} // namespace mskd::losses
