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

// Small synthetic corpora and models shared by the training-level tests.

#include <vector>

#include "mskd/data.hpp"
#include "mskd/model.hpp"
#include "mskd/training.hpp"

namespace fixtures {

inline mskd::data::SynthConfig tiny_synth(int K = 3, int n_train = 12, int n_test = 6) {
    mskd::data::SynthConfig c;
    c.num_organs = K;
    c.image_size = 16;
    c.num_train = n_train;
    c.num_test = n_test;
    c.axis_min = 1.5;
    c.axis_max = 2.5;
    c.margin = 0.5;
    return c;
}

inline mskd::model::ModelConfig tiny_model(int out = 2) {
    mskd::model::ModelConfig c;
    c.out_channels = out;
    c.depth = 2;
    c.base_width = 4;
    return c;
}

inline mskd::training::TrainConfig quick(int epochs = 2, int iters = 3) {
    mskd::training::TrainConfig c;
    c.max_epochs = epochs;
    c.iters_per_epoch = iters;
    c.batch_size = 2;
    return c;
}

inline std::vector<mskd::model::SegModel> quick_teachers(const std::vector<mskd::data::Dataset>& bins) {
    std::vector<mskd::model::SegModel> out;
    for (std::size_t k = 0; k < bins.size(); ++k) {
        auto c = quick();
        c.seed = 20 + k;
        out.push_back(mskd::training::train_teacher(bins[k], tiny_model(), c).model);
    }
    return out;
}

} // namespace fixtures
