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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mskd/data.hpp"
#include "mskd/io.hpp"
#include "mskd/losses.hpp"
#include "mskd/model.hpp"
#include "mskd/optimizer.hpp"

namespace mskd::training {

struct TrainConfig {
    int batch_size = 4;
    int iters_per_epoch = 250;
    int max_epochs = 30;
    double initial_lr = 3e-4;
    double lr_decay_factor = 0.8;
    double lr_decay_trigger = 1e-3;
    double fg_fraction = 0.33;
    losses::LossWeights weights;
    std::uint64_t seed = 1;
    /// Adds a cross-entropy term on each union image's own annotated organ.
    bool mixed_supervision = false;

    void validate() const;
    /// Reads train.* and loss.* keys; absent keys keep their defaults.
    static TrainConfig from_keys(const io::KeyValues& kv);
    void to_keys(io::KeyValues& kv) const;

    std::uint64_t init_seed() const;
    std::uint64_t sampling_seed() const;
};

/// model.depth, model.base_width, model.feature_tap_level; the channel
/// counts come from the caller.
model::ModelConfig model_config_from_keys(const io::KeyValues& kv, int out_channels);
void model_config_to_keys(const model::ModelConfig& config, io::KeyValues& kv);

/// Learning rate for the next epoch: decays by `factor` when the epoch loss
/// fell by less than `trigger`. With no previous epoch the rate is kept.
double lr_schedule_step(std::optional<double> prev_epoch_loss, double curr_epoch_loss, double lr,
                        double factor = 0.8, double trigger = 1e-3);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;  ///< rate used during this epoch
    double loss = 0.0; ///< mean total loss over the epoch's iterations
    losses::LossBreakdown breakdown; ///< epoch means; distillation only
    double supervised = 0.0;         ///< mixed-supervision term, epoch mean
};

struct TrainResult {
    model::SegModel model;
    model::AdamState<float> optimizer;
    std::vector<EpochRecord> curve;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Supervised training with seg_loss_dice_ce on the dataset's own labels.
/// Labels must lie in [0, out_channels).
TrainResult train_supervised(const data::Dataset& dataset, const model::ModelConfig& model_config,
                             const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Binary teacher for one organ. The dataset must be a binary-organ set.
TrainResult train_teacher(const data::Dataset& binary_dataset, const model::ModelConfig& model_config,
                          const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Per-item teacher outputs in double precision: [item][teacher].
struct TeacherOutputs {
    std::vector<std::vector<Tensor<double>>> logits;
    std::vector<std::vector<Tensor<double>>> features;
};

TeacherOutputs run_teachers(std::span<const model::SegModel> teachers, const Tensor<float>& batch);

/// ConfigError unless every teacher is a 2-class model sharing the
/// student's architecture (and hence its feature tap width).
void check_teacher_compatibility(std::span<const model::SegModel> teachers, const model::ModelConfig& student);

/// Region-based multi-teacher distillation into a (K+1)-class student. Only
/// images and manifest foreground flags of the union are read, never labels
/// (unless mixed supervision is enabled).
TrainResult distill_student(std::span<const model::SegModel> teachers, const data::Dataset& union_dataset,
                            const model::ModelConfig& model_config, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

/// One text line per epoch with every loss component.
std::string format_epoch_record(const EpochRecord& record);

/// Run directory: config.txt, seeds.txt, log.txt, model.ckpt, run.txt.
struct RunInfo {
    std::string method;
    std::vector<std::string> notes; ///< extra key=value lines for run.txt
};

void write_run(const std::filesystem::path& dir, const TrainResult& result, const io::KeyValues& config_snapshot,
               const TrainConfig& config, const RunInfo& info);

} // namespace mskd::training
