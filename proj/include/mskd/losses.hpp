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

#include "mskd/masks.hpp"
#include "mskd/tensor.hpp"

// Supervision signals for teacher training and multi-teacher distillation.
//
// Probability tensors are C×H×W with channel 0 the background. Every KL
// term is KL(target ‖ student) and is normalised by the FULL pixel count of
// its resolution, not by the size of the mask that gates it, so a loss
// scales with the area of its region.

namespace mskd::losses {

/// Floor applied to student probabilities inside logarithms.
inline constexpr double kProbFloor = 1e-12;
/// Dice smoothing, added to both numerator and denominator.
inline constexpr double kDiceSmooth = 1e-5;

struct LossWeights {
    double lambda1 = 1.0;  ///< background logits term
    double lambda2 = 10.0; ///< feature term

    void validate() const;
};

struct LossBreakdown {
    std::vector<double> per_organ_logit;
    double background_logit = 0.0;
    std::vector<double> per_organ_feature;
    double total = 0.0;
};

/// Per-pixel softmax over the channel axis, max-shifted for stability.
Tensor<double> softmax_channels(const Tensor<double>& logits);

/// Embeds teacher k's 2-class distribution into the (K+1)-class space:
/// background → channel 0, organ → channel k, every other channel 0.
Tensor<double> transfer_logits(const Tensor<double>& teacher_probs, int organ, int num_organs);

/// Elementwise mean of the K transferred teacher distributions.
Tensor<double> background_signal(std::span<const Tensor<double>> transferred);

double masked_kl(const Tensor<double>& target, const Tensor<double>& student, const Mask& mask);

double organ_logit_loss(const Tensor<double>& teacher_probs, const Tensor<double>& student_probs,
                        const Mask& organ_mask, int organ, int num_organs);

double background_logit_loss(std::span<const Tensor<double>> teacher_probs, const Tensor<double>& student_probs,
                             const Mask& background_mask, int num_organs);

/// KL between per-pixel channel vectors after sorting each in descending
/// order. Both inputs are already channel-softmaxed feature maps.
double sorted_feature_loss(const Tensor<double>& teacher_features, const Tensor<double>& student_features,
                           const Mask& mask);

LossBreakdown total_loss(std::vector<double> per_organ_logit, double background_logit,
                         std::vector<double> per_organ_feature, const LossWeights& weights);

/// Soft dice (mean over all classes) plus pixel-mean cross entropy, unit
/// weights. Writes d(loss)/d(logits) when `grad_logits` is non-null.
double seg_loss_dice_ce(const Tensor<double>& logits, const LabelMap& labels, Tensor<double>* grad_logits = nullptr);

/// Adds scale · d masked_kl / d student_logits, where student_probs =
/// softmax(student_logits).
void masked_kl_grad(const Tensor<double>& target, const Tensor<double>& student_probs, const Mask& mask,
                    double scale, Tensor<double>& grad_logits);

/// Adds scale · d sorted_feature_loss / d student_raw_features.
void sorted_feature_grad(const Tensor<double>& teacher_features, const Tensor<double>& student_features,
                         const Mask& mask, double scale, Tensor<double>& grad_features);

/// Everything the frozen teachers contribute for one image.
struct DistillTargets {
    std::vector<Tensor<double>> teacher_probs;         ///< K × (2×H×W)
    std::vector<Tensor<double>> teacher_feature_probs; ///< K × (C×h×w), channel-softmaxed
    masks::RegionMaskSet masks;
};

DistillTargets make_distill_targets(std::span<const Tensor<double>> teacher_logits,
                                    std::span<const Tensor<double>> teacher_features, int feature_level);

struct ObjectiveGradient {
    Tensor<double> logits;
    Tensor<double> features;
};

/// Region-based distillation loss for one image given raw student logits
/// ((K+1)×H×W) and the raw student feature tap (C×h×w).
LossBreakdown distillation_objective(const DistillTargets& targets, const Tensor<double>& student_logits,
                                     const Tensor<double>& student_features, const LossWeights& weights,
                                     ObjectiveGradient* grad = nullptr);

} // namespace mskd::losses
