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

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mskd/data.hpp"
#include "mskd/model.hpp"
#include "mskd/tensor.hpp"

namespace mskd::metrics {

/// 2|A∩B| / (|A|+|B|), 1 when both masks are empty.
double dsc(const Mask& pred, const Mask& gt);

/// Classical (max) symmetric Hausdorff distance between the foreground
/// point sets, with per-axis spacing {row, column}. nullopt when either
/// mask is empty.
std::optional<double> hausdorff(const Mask& pred, const Mask& gt, std::array<double, 2> spacing = {1.0, 1.0});

struct OrganScore {
    double dsc_percent = 0.0;
    std::optional<double> hd;
    int n_images = 0;
    int n_hd_excluded = 0;
};

struct ReportRow {
    std::string method;
    std::vector<OrganScore> organs;
    OrganScore average;
};

struct MetricsReport {
    int num_organs = 0;
    std::string hd_unit = "px";
    std::vector<ReportRow> rows;
};

/// Scores label-map predictions against multi-organ ground truth: organ k
/// is scored as (pred == k) vs (gt == k), per image, then averaged.
ReportRow score_predictions(const std::string& method, std::span<const LabelMap> predictions,
                            std::span<const LabelMap> ground_truth, int num_organs,
                            std::array<double, 2> spacing = {1.0, 1.0});

/// Argmax label maps of a (K+1)-class model over a dataset.
std::vector<LabelMap> predict_labels(const model::SegModel& model, const data::Dataset& dataset, int batch_size = 8);

/// Report row for a multi-organ model; ConfigError when its class count is
/// not K+1 for the test set's K organs.
ReportRow evaluate_model(const std::string& method, const model::SegModel& model, const data::Dataset& test_set);

/// 1 − max_c p_c per pixel of a C×H×W probability map.
Tensor<double> uncertainty_map(const Tensor<double>& probs);

/// 8-bit rendering where darker means more uncertain; the maximum possible
/// uncertainty 1 − 1/C maps to black.
Tensor<std::uint8_t> uncertainty_image(const Tensor<double>& uncertainty, int num_classes);

void write_png_gray(const std::filesystem::path& path, const Tensor<std::uint8_t>& image);

std::string format_csv(const MetricsReport& report);
std::string format_table(const MetricsReport& report);
MetricsReport parse_csv(const std::string& text, const std::string& origin);

/// Concatenates rows of several reports, which must agree on organ count.
MetricsReport merge_reports(std::span<const MetricsReport> reports);

} // namespace mskd::metrics
