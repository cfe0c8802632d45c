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
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mskd/io.hpp"
#include "mskd/tensor.hpp"

namespace mskd::data {

struct Band {
    double lo = 0;
    double hi = 0;
};

struct CanvasRegion {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; ///< half-open pixel box
};

/// Parameters of the synthetic abdominal-phantom generator. Intensities
/// are on a CT-like scale so the usual [-325, 325] window applies.
struct SynthConfig {
    int num_organs = 3;
    int image_size = 64;
    int num_train = 200;
    int num_test = 50;
    std::vector<Band> bands; ///< per organ; empty selects evenly spaced defaults
    double noise_std = 30.0;
    double background_level = -40.0;
    double background_texture = 60.0; ///< peak amplitude of the smooth background field
    double axis_min = 6.0;            ///< ellipse semi-axis range, pixels
    double axis_max = 11.0;
    double wobble = 0.15;             ///< relative radial boundary perturbation
    double margin = 1.0;
    std::uint64_t seed = 7;
    bool disjoint_subsets = false;
    double clip_lo = -325.0;
    double clip_hi = 325.0;

    /// Throws ConfigError, including when an organ cannot fit its region.
    void validate() const;
    std::vector<Band> resolved_bands() const;
    std::vector<CanvasRegion> canonical_regions() const;

    static SynthConfig from_keys(const io::KeyValues& kv);
    void to_keys(io::KeyValues& kv) const;
};

struct Item {
    Tensor<float> image;       ///< H×W raw intensities
    LabelMap label;            ///< H×W; may be empty when labels were not loaded
    std::vector<int> annotated;///< organ ids whose annotation this item carries
    bool foreground = false;   ///< annotation contains at least one organ pixel
    int source = 0;            ///< index of the generated image this came from
    int origin_organ = 0;      ///< binary datasets: the annotated organ
};

struct Dataset {
    std::string kind = "multi-organ"; ///< multi-organ | binary-organ-<k> | union
    int num_organs = 0;
    int image_size = 0;
    std::uint64_t seed = 0;
    double clip_lo = -325.0;
    double clip_hi = 325.0;
    std::string provenance = "synthetic";
    std::vector<Item> items;

    bool is_binary() const { return kind.starts_with("binary-organ-"); }
};

struct SyntheticCorpus {
    Dataset train;
    Dataset test;
};

SyntheticCorpus generate_synthetic_dataset(const SynthConfig& config);

/// Labels become 1 where label == organ, else 0; images are shared.
Dataset derive_binary_dataset(const Dataset& multi, int organ);

/// One binary dataset per organ. In disjoint mode organ k receives the k-th
/// contiguous block of N/K images so the K corpora share no image.
std::vector<Dataset> derive_binary_datasets(const Dataset& multi, bool disjoint);

/// Concatenation of several datasets' items (the distillation image union).
Dataset make_union(std::span<const Dataset> parts);

/// Clamp to [lo, hi] and map affinely onto [-1, 1].
Tensor<float> clip_normalize_intensity(const Tensor<float>& image, double lo, double hi);

/// Indices of a batch: ceil(fg_fraction · batch_size) items drawn from the
/// foreground-bearing items, the rest uniformly from all items.
std::vector<std::size_t> sample_batch(const Dataset& dataset, int batch_size, double fg_fraction,
                                      std::mt19937_64& rng);

/// B×1×H×W normalised image batch.
Tensor<float> image_batch(const Dataset& dataset, std::span<const std::size_t> indices);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir, bool with_labels = true);

/// Deterministic child seed for a named stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0);

} // namespace mskd::data
