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

#include "mskd/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "mskd/losses.hpp"
#include "mskd/masks.hpp"

namespace mskd::baselines {

LabelMap merge_teacher_predictions(std::span<const Tensor<double>> teacher_logits) {
    if (teacher_logits.empty()) throw InvalidInputError("merge_teacher_predictions: no teachers");
    std::vector<Mask> claims;
    std::vector<Tensor<double>> probs;
    for (const auto& l : teacher_logits) {
        claims.push_back(masks::binarize_prediction(l));
        require_shape(l.shape(), teacher_logits[0].shape(), "merge_teacher_predictions");
        probs.push_back(losses::softmax_channels(l));
    }
    const std::size_t HW = claims[0].size();
    LabelMap out(claims[0].shape());
    for (std::size_t i = 0; i < HW; ++i) {
        double best = -1;
        for (std::size_t k = 0; k < claims.size(); ++k) {
            if (!claims[k][i]) continue;
            const double p = probs[k][HW + i];
            if (p > best) best = p, out[i] = static_cast<std::uint8_t>(k + 1);
        }
    }
    return out;
}

std::vector<LabelMap> merge_teacher_predictions(std::span<const model::SegModel> teachers,
                                                const data::Dataset& dataset, int batch_size) {
    if (teachers.empty()) throw InvalidInputError("merge_teacher_predictions: no teachers");
    std::vector<LabelMap> out;
    const std::size_t N = dataset.items.size(), step = static_cast<std::size_t>(std::max(1, batch_size));
    for (std::size_t start = 0; start < N; start += step) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(N, start + step); ++i) idx.push_back(i);
        const auto t = training::run_teachers(teachers, data::image_batch(dataset, idx));
        for (const auto& logits : t.logits) out.push_back(merge_teacher_predictions(logits));
    }
    return out;
}

metrics::ReportRow evaluate_merged_teachers(std::span<const model::SegModel> teachers,
                                            const data::Dataset& test_set, const std::string& method) {
    if (static_cast<int>(teachers.size()) != test_set.num_organs)
        throw ConfigError(std::to_string(teachers.size()) + " teachers for a test set with " +
                          std::to_string(test_set.num_organs) + " organs");
    for (std::size_t k = 0; k < teachers.size(); ++k)
        if (teachers[k].config().out_channels != 2)
            throw ConfigError("teacher " + std::to_string(k + 1) + " has " +
                              std::to_string(teachers[k].config().out_channels) + " output classes, expected 2");
    std::vector<LabelMap> gt;
    for (const auto& item : test_set.items) {
        if (item.label.empty()) throw DataError("evaluate_merged_teachers: test labels not loaded");
        gt.push_back(item.label);
    }
    const auto pred = merge_teacher_predictions(teachers, test_set);
    return metrics::score_predictions(method, pred, gt, test_set.num_organs);
}

data::Dataset make_pseudo_label_dataset(std::span<const model::SegModel> teachers,
                                        const data::Dataset& union_dataset) {
    data::Dataset out = union_dataset;
    out.kind = "multi-organ";
    out.num_organs = static_cast<int>(teachers.size());
    out.provenance = "pseudo-label:merged-teachers(" + std::to_string(teachers.size()) + ") from " +
                     union_dataset.provenance;
    const auto labels = merge_teacher_predictions(teachers, union_dataset);
    for (std::size_t i = 0; i < out.items.size(); ++i) {
        auto& item = out.items[i];
        item.label = labels[i];
        item.annotated.clear();
        for (int k = 1; k <= out.num_organs; ++k) item.annotated.push_back(k);
        item.foreground = std::any_of(item.label.values().begin(), item.label.values().end(),
                                      [](std::uint8_t v) { return v != 0; });
        item.origin_organ = 0;
    }
    return out;
}

training::TrainResult hard_pseudo_label_distill(std::span<const model::SegModel> teachers,
                                                const data::Dataset& union_dataset,
                                                const model::ModelConfig& model_config,
                                                const training::TrainConfig& config,
                                                const training::EpochCallback& on_epoch,
                                                data::Dataset* pseudo_labels) {
    config.validate();
    training::check_teacher_compatibility(teachers, model_config);
    data::Dataset pseudo = make_pseudo_label_dataset(teachers, union_dataset);
    // With fg_fraction > 0 and teachers that never fire there is nothing to
    // sample; fall back to uniform batches rather than failing.
    training::TrainConfig c = config;
    if (std::none_of(pseudo.items.begin(), pseudo.items.end(), [](const data::Item& i) { return i.foreground; }))
        c.fg_fraction = 0;
    auto result = training::train_supervised(pseudo, model_config, c, on_epoch);
    if (pseudo_labels) *pseudo_labels = std::move(pseudo);
    return result;
}

} // namespace mskd::baselines
