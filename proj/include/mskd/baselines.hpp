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

#include "mskd/data.hpp"
#include "mskd/metrics.hpp"
#include "mskd/model.hpp"
#include "mskd/training.hpp"

namespace mskd::baselines {

/// Label map from K teachers' 2×H×W logits for one image. A pixel gets the
/// organ of the most confident teacher among those that claim it (ties go
/// to the lower organ index) and 0 when no teacher claims it.
LabelMap merge_teacher_predictions(std::span<const Tensor<double>> teacher_logits);

std::vector<LabelMap> merge_teacher_predictions(std::span<const model::SegModel> teachers,
                                                const data::Dataset& dataset, int batch_size = 8);

/// The "Individual" report row.
metrics::ReportRow evaluate_merged_teachers(std::span<const model::SegModel> teachers,
                                            const data::Dataset& test_set,
                                            const std::string& method = "Individual");

/// Multi-organ dataset whose labels are the merged teacher predictions on
/// the union's images.
data::Dataset make_pseudo_label_dataset(std::span<const model::SegModel> teachers,
                                        const data::Dataset& union_dataset);

/// Trains a (K+1)-class student with dice+CE on merged hard pseudo-labels.
training::TrainResult hard_pseudo_label_distill(std::span<const model::SegModel> teachers,
                                                const data::Dataset& union_dataset,
                                                const model::ModelConfig& model_config,
                                                const training::TrainConfig& config,
                                                const training::EpochCallback& on_epoch = {},
                                                data::Dataset* pseudo_labels = nullptr);

} // namespace mskd::baselines
