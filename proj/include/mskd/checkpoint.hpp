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

#include <filesystem>
#include <optional>
#include <vector>

#include "mskd/model.hpp"
#include "mskd/optimizer.hpp"

// Checkpoint layout (all integers little-endian):
//
//   "MSKD"                     4 bytes
//   u32 version                currently 1
//   i32 × 5 ModelConfig        in_channels, out_channels, depth, base_width,
//                              feature_tap_level
//   u64 optimizer step         0 when no optimizer state is stored
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 dtype code (1 = f32),
//               u32 rank, rank × u64 dims, f32 payload
//
// Parameters appear in layout order under their own names, followed (when
// present) by "adam.m.<name>" and "adam.v.<name>" moment tensors.

namespace mskd::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    SegModel model;
    std::optional<AdamState<float>> optimizer;
};

std::vector<char> encode_checkpoint(const SegModel& model, const AdamState<float>* optimizer);
Checkpoint decode_checkpoint(std::span<const char> bytes);

void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const AdamState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// As load_checkpoint, but raises ConfigError naming both arities when the
/// stored model's output channel count differs from `expected_out_channels`.
Checkpoint load_checkpoint_expecting(const std::filesystem::path& path, int expected_out_channels);

} // namespace mskd::model
