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

#include "mskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace mskd::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> parse_ints(const std::string& s, const std::string& what) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw DataError(what + ": '" + s + "' is not a list of integers");
        }
    }
    return out;
}

std::string numbered(const char* stem, std::size_t i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_%05zu.mskt", stem, i);
    return buf;
}

// One phantom slice: smooth textured background, K wobbly ellipses each in
// its own canvas cell with its own intensity band, then white noise.
Item synthesize(const SynthConfig& c, const std::vector<Band>& bands, const std::vector<CanvasRegion>& regions,
                std::uint64_t seed, int source) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const auto n = static_cast<std::size_t>(c.image_size);
    std::vector<double> raw(n * n);
    LabelMap label(Shape{n, n});

    struct Wave {
        double amp, kx, ky, phase;
    };
    Wave waves[3];
    for (auto& w : waves) {
        const double freq = uniform(0.03, 0.12), dir = uniform(0.0, kTwoPi);
        w = {uniform(0.5, 1.0) * c.background_texture / 3.0, kTwoPi * freq * std::cos(dir),
             kTwoPi * freq * std::sin(dir), uniform(0.0, kTwoPi)};
    }
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            double v = c.background_level;
            for (const auto& w : waves)
                v += w.amp * std::sin(w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y) + w.phase);
            raw[y * n + x] = v;
        }

    const double reach = c.axis_max * (1.0 + c.wobble) + c.margin;
    for (int k = 1; k <= c.num_organs; ++k) {
        const auto& reg = regions[static_cast<std::size_t>(k - 1)];
        const auto& band = bands[static_cast<std::size_t>(k - 1)];
        const double a = uniform(c.axis_min, c.axis_max), b = uniform(c.axis_min, c.axis_max);
        const double theta = uniform(0.0, std::numbers::pi);
        const double lobe_phase = uniform(0.0, kTwoPi);
        const double cx = uniform(reg.x0 + reach, reg.x1 - reach), cy = uniform(reg.y0 + reach, reg.y1 - reach);
        const double width = band.hi - band.lo;
        const double mean = uniform(band.lo + 0.25 * width, band.hi - 0.25 * width);
        const double tex_amp = 0.2 * width, tex_freq = uniform(0.08, 0.2), tex_phase = uniform(0.0, kTwoPi);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int y = reg.y0; y < reg.y1; ++y)
            for (int x = reg.x0; x < reg.x1; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = (ct * dx + st * dy) / a, v = (-st * dx + ct * dy) / b;
                const double rho = std::hypot(u, v);
                const double limit = 1.0 + c.wobble * std::sin(3.0 * std::atan2(v, u) + lobe_phase);
                if (rho > limit) continue;
                const auto i = static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x);
                label[i] = static_cast<std::uint8_t>(k);
                const double tex = tex_amp * std::sin(kTwoPi * tex_freq * (dx + 0.7 * dy) + tex_phase);
                raw[i] = std::clamp(mean + tex, band.lo, band.hi);
            }
    }

    std::normal_distribution<double> noise(0.0, c.noise_std);
    Tensor<float> image(Shape{n, n});
    for (std::size_t i = 0; i < raw.size(); ++i)
        image[i] = static_cast<float>(c.noise_std > 0 ? raw[i] + noise(rng) : raw[i]);

    Item item;
    item.image = std::move(image);
    item.label = std::move(label);
    for (int k = 1; k <= c.num_organs; ++k) item.annotated.push_back(k);
    item.foreground = std::any_of(item.label.values().begin(), item.label.values().end(),
                                  [](std::uint8_t v) { return v != 0; });
    item.source = source;
    return item;
}

Dataset generate_split(const SynthConfig& c, std::uint64_t stream, int count) {
    const auto bands = c.resolved_bands();
    const auto regions = c.canonical_regions();
    Dataset ds;
    ds.kind = "multi-organ";
    ds.num_organs = c.num_organs;
    ds.image_size = c.image_size;
    ds.seed = c.seed;
    ds.clip_lo = c.clip_lo;
    ds.clip_hi = c.clip_hi;
    ds.items.resize(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i)
        ds.items[static_cast<std::size_t>(i)] =
            synthesize(c, bands, regions, derive_seed(c.seed, stream, static_cast<std::uint64_t>(i)), i);
    return ds;
}

} // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index);
}

std::vector<Band> SynthConfig::resolved_bands() const {
    if (!bands.empty()) return bands;
    std::vector<Band> out;
    const double lo = 40.0, hi = 280.0, w = (hi - lo) / num_organs, gap = 0.1 * w;
    for (int k = 0; k < num_organs; ++k) out.push_back({lo + k * w + gap, lo + (k + 1) * w - gap});
    return out;
}

std::vector<CanvasRegion> SynthConfig::canonical_regions() const {
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_organs))));
    const int rows = (num_organs + cols - 1) / cols;
    const int cw = image_size / cols, rh = image_size / rows;
    std::vector<CanvasRegion> out;
    for (int k = 0; k < num_organs; ++k) {
        const int r = k / cols, col = k % cols;
        out.push_back({col * cw, r * rh, (col + 1) * cw, (r + 1) * rh});
    }
    return out;
}

void SynthConfig::validate() const {
    if (num_organs < 1 || num_organs > 255) throw ConfigError("data.num_organs must be in 1..255");
    if (image_size < 8) throw ConfigError("data.image_size must be >= 8");
    if (num_train < 0 || num_test < 0) throw ConfigError("data.num_train/num_test must be >= 0");
    if (!(noise_std >= 0)) throw ConfigError("data.noise_std must be >= 0");
    if (!(axis_min > 0) || !(axis_max >= axis_min)) throw ConfigError("data.axis_min/axis_max must satisfy 0 < min <= max");
    if (!(wobble >= 0 && wobble < 1)) throw ConfigError("data.wobble must be in [0, 1)");
    if (!(margin >= 0)) throw ConfigError("data.margin must be >= 0");
    if (!(clip_lo < clip_hi)) throw ConfigError("data.clip_lo must be < data.clip_hi");
    if (!bands.empty() && bands.size() != static_cast<std::size_t>(num_organs))
        throw ConfigError("expected " + std::to_string(num_organs) + " organ bands, got " +
                          std::to_string(bands.size()));
    auto resolved = resolved_bands();
    for (std::size_t i = 0; i < resolved.size(); ++i) {
        if (!(resolved[i].lo < resolved[i].hi))
            throw ConfigError("organ " + std::to_string(i + 1) + " band is empty");
        for (std::size_t j = 0; j < i; ++j)
            if (resolved[i].lo < resolved[j].hi && resolved[j].lo < resolved[i].hi)
                throw ConfigError("organ bands " + std::to_string(j + 1) + " and " + std::to_string(i + 1) +
                                  " overlap");
    }
    const double reach = axis_max * (1.0 + wobble) + margin;
    for (std::size_t k = 0; k < static_cast<std::size_t>(num_organs); ++k) {
        const auto r = canonical_regions()[k];
        if (r.x1 - r.x0 < 2 * reach || r.y1 - r.y0 < 2 * reach)
            throw ConfigError("canonical region of organ " + std::to_string(k + 1) + " is " +
                              std::to_string(r.x1 - r.x0) + "x" + std::to_string(r.y1 - r.y0) +
                              " pixels, too small for axis_max " + io::format_double(axis_max) + " (needs " +
                              io::format_double(2 * reach) + ")");
    }
}

SynthConfig SynthConfig::from_keys(const io::KeyValues& kv) {
    SynthConfig c;
    c.num_organs = static_cast<int>(kv.get_int("data.num_organs", c.num_organs));
    c.image_size = static_cast<int>(kv.get_int("data.image_size", c.image_size));
    c.num_train = static_cast<int>(kv.get_int("data.num_train", c.num_train));
    c.num_test = static_cast<int>(kv.get_int("data.num_test", c.num_test));
    c.noise_std = kv.get_double("data.noise_std", c.noise_std);
    c.background_level = kv.get_double("data.background_level", c.background_level);
    c.background_texture = kv.get_double("data.background_texture", c.background_texture);
    c.axis_min = kv.get_double("data.axis_min", c.axis_min);
    c.axis_max = kv.get_double("data.axis_max", c.axis_max);
    c.wobble = kv.get_double("data.wobble", c.wobble);
    c.margin = kv.get_double("data.margin", c.margin);
    c.seed = static_cast<std::uint64_t>(kv.get_int("data.seed", static_cast<long long>(c.seed)));
    c.disjoint_subsets = kv.get_bool("data.disjoint_subsets", c.disjoint_subsets);
    c.clip_lo = kv.get_double("data.clip_lo", c.clip_lo);
    c.clip_hi = kv.get_double("data.clip_hi", c.clip_hi);
    for (int k = 1; k <= c.num_organs; ++k) {
        auto v = kv.find("data.organ." + std::to_string(k) + ".band");
        if (!v) continue;
        const auto comma = v->find(',');
        if (comma == std::string::npos) throw ConfigError("data.organ." + std::to_string(k) + ".band must be lo,hi");
        io::KeyValues tmp;
        tmp.set("lo", v->substr(0, comma));
        tmp.set("hi", v->substr(comma + 1));
        if (c.bands.empty()) c.bands = c.resolved_bands();
        c.bands[static_cast<std::size_t>(k - 1)] = {tmp.get_double("lo", 0), tmp.get_double("hi", 0)};
    }
    c.validate();
    return c;
}

void SynthConfig::to_keys(io::KeyValues& kv) const {
    kv.set("data.num_organs", num_organs);
    kv.set("data.image_size", image_size);
    kv.set("data.num_train", num_train);
    kv.set("data.num_test", num_test);
    kv.set("data.noise_std", noise_std);
    kv.set("data.background_level", background_level);
    kv.set("data.background_texture", background_texture);
    kv.set("data.axis_min", axis_min);
    kv.set("data.axis_max", axis_max);
    kv.set("data.wobble", wobble);
    kv.set("data.margin", margin);
    kv.set("data.seed", static_cast<long long>(seed));
    kv.set("data.disjoint_subsets", disjoint_subsets);
    kv.set("data.clip_lo", clip_lo);
    kv.set("data.clip_hi", clip_hi);
    const auto b = resolved_bands();
    for (std::size_t k = 0; k < b.size(); ++k)
        kv.set("data.organ." + std::to_string(k + 1) + ".band", io::format_double(b[k].lo) + "," + io::format_double(b[k].hi));
}

SyntheticCorpus generate_synthetic_dataset(const SynthConfig& config) {
    config.validate();
    return {generate_split(config, 1, config.num_train), generate_split(config, 2, config.num_test)};
}

Dataset derive_binary_dataset(const Dataset& multi, int organ) {
    if (organ < 1 || organ > multi.num_organs)
        throw InvalidInputError("derive_binary_dataset: organ " + std::to_string(organ) + " outside 1.." +
                                std::to_string(multi.num_organs));
    Dataset out = multi;
    out.kind = "binary-organ-" + std::to_string(organ);
    for (auto& item : out.items) {
        if (item.label.empty()) throw DataError("derive_binary_dataset: source labels not loaded");
        bool fg = false;
        for (auto& v : item.label.values()) {
            v = v == organ ? 1 : 0;
            fg = fg || v;
        }
        item.annotated = {organ};
        item.foreground = fg;
        item.origin_organ = organ;
    }
    return out;
}

std::vector<Dataset> derive_binary_datasets(const Dataset& multi, bool disjoint) {
    std::vector<Dataset> out;
    const std::size_t K = static_cast<std::size_t>(multi.num_organs), N = multi.items.size();
    for (std::size_t k = 1; k <= K; ++k) {
        Dataset d = derive_binary_dataset(multi, static_cast<int>(k));
        if (disjoint) {
            const std::size_t begin = (k - 1) * N / K, end = k * N / K;
            d.items = std::vector<Item>(d.items.begin() + static_cast<std::ptrdiff_t>(begin),
                                        d.items.begin() + static_cast<std::ptrdiff_t>(end));
        }
        out.push_back(std::move(d));
    }
    return out;
}

Dataset make_union(std::span<const Dataset> parts) {
    if (parts.empty()) throw InvalidInputError("make_union: no datasets");
    Dataset out;
    out.kind = "union";
    out.num_organs = static_cast<int>(parts.size());
    out.image_size = parts.front().image_size;
    out.seed = parts.front().seed;
    out.clip_lo = parts.front().clip_lo;
    out.clip_hi = parts.front().clip_hi;
    for (const auto& p : parts) {
        if (p.image_size != out.image_size || p.clip_lo != out.clip_lo || p.clip_hi != out.clip_hi)
            throw DataError("make_union: datasets differ in image size or intensity window");
        out.items.insert(out.items.end(), p.items.begin(), p.items.end());
    }
    return out;
}

Tensor<float> clip_normalize_intensity(const Tensor<float>& image, double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("clip_normalize_intensity: lo must be < hi");
    Tensor<float> out(image.shape());
    const double scale = 2.0 / (hi - lo);
    for (std::size_t i = 0; i < image.size(); ++i)
        out[i] = static_cast<float>((std::clamp(static_cast<double>(image[i]), lo, hi) - lo) * scale - 1.0);
    return out;
}

std::vector<std::size_t> sample_batch(const Dataset& dataset, int batch_size, double fg_fraction,
                                      std::mt19937_64& rng) {
    if (!(fg_fraction >= 0 && fg_fraction <= 1))
        throw InvalidInputError("sample_batch: fg_fraction must be in [0, 1]");
    if (batch_size < 1) throw InvalidInputError("sample_batch: batch_size must be >= 1");
    if (dataset.items.empty()) throw SamplingError("sample_batch: dataset is empty");
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < dataset.items.size(); ++i)
        if (dataset.items[i].foreground) fg.push_back(i);
    // 1e-9 keeps exact products such as 0.25 · 4 from rounding up.
    const auto n_fg = fg_fraction == 0 ? 0 : static_cast<int>(std::ceil(fg_fraction * batch_size - 1e-9));
    if (n_fg > 0 && fg.empty())
        throw SamplingError("sample_batch: fg_fraction " + io::format_double(fg_fraction) +
                            " requested but no item has foreground");
    std::vector<std::size_t> out;
    std::uniform_int_distribution<std::size_t> pick_fg(0, fg.empty() ? 0 : fg.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_any(0, dataset.items.size() - 1);
    for (int i = 0; i < batch_size; ++i) out.push_back(i < n_fg ? fg[pick_fg(rng)] : pick_any(rng));
    return out;
}

Tensor<float> image_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    const auto n = static_cast<std::size_t>(dataset.image_size);
    Tensor<float> out(Shape{indices.size(), 1, n, n});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& img = dataset.items.at(indices[b]).image;
        require_shape(img.shape(), Shape{n, n}, "image_batch item");
        auto norm = clip_normalize_intensity(img, dataset.clip_lo, dataset.clip_hi);
        std::copy(norm.values().begin(), norm.values().end(), out.data() + b * n * n);
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    std::filesystem::create_directories(dir);
    io::KeyValues kv;
    kv.set("version", 1);
    kv.set("kind", dataset.kind);
    kv.set("num_organs", dataset.num_organs);
    kv.set("count", dataset.items.size());
    kv.set("image_size", dataset.image_size);
    kv.set("seed", static_cast<long long>(dataset.seed));
    kv.set("clip_lo", dataset.clip_lo);
    kv.set("clip_hi", dataset.clip_hi);
    kv.set("provenance", dataset.provenance);
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const auto& item = dataset.items[i];
        const auto pre = "item." + std::to_string(i) + ".";
        kv.set(pre + "image", numbered("image", i));
        kv.set(pre + "label", numbered("label", i));
        kv.set(pre + "source", item.source);
        kv.set(pre + "annotated", join_ints(item.annotated));
        kv.set(pre + "foreground", item.foreground);
        if (item.origin_organ) kv.set(pre + "origin_organ", item.origin_organ);
        io::write_tensor(dir / numbered("image", i), item.image);
        io::write_tensor(dir / numbered("label", i), item.label);
    }
    kv.save(dir / "manifest.txt");
}

Dataset load_dataset(const std::filesystem::path& dir, bool with_labels) {
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path))
        throw DataError("no dataset manifest at '" + manifest_path.string() + "'");
    io::KeyValues kv;
    try {
        kv = io::KeyValues::load(manifest_path);
    } catch (const ConfigError& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    try {
        if (kv.get_int("version", 0) != 1) throw DataError("unsupported manifest version in '" + dir.string() + "'");
        Dataset ds;
        ds.kind = kv.get("kind");
        ds.num_organs = static_cast<int>(kv.get_int("num_organs", 0));
        ds.image_size = static_cast<int>(kv.get_int("image_size", 0));
        ds.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
        ds.clip_lo = kv.get_double("clip_lo", -325.0);
        ds.clip_hi = kv.get_double("clip_hi", 325.0);
        ds.provenance = kv.get_string("provenance", "");
        const auto count = kv.get_int("count", -1);
        if (count < 0) throw DataError("manifest in '" + dir.string() + "' lacks an item count");
        const auto n = static_cast<std::size_t>(ds.image_size);
        for (long long i = 0; i < count; ++i) {
            const auto pre = "item." + std::to_string(i) + ".";
            Item item;
            item.image = io::read_tensor<float>(dir / kv.get(pre + "image"));
            require_shape(item.image.shape(), Shape{n, n}, "dataset image");
            const auto label_path = dir / kv.get(pre + "label");
            if (!std::filesystem::exists(label_path)) throw DataError("missing label file '" + label_path.string() + "'");
            if (with_labels) {
                item.label = io::read_tensor<std::uint8_t>(label_path);
                require_shape(item.label.shape(), Shape{n, n}, "dataset label");
                const int max_label = ds.is_binary() ? 1 : ds.num_organs;
                for (auto v : item.label.values())
                    if (v > max_label)
                        throw DataError("label value " + std::to_string(v) + " in '" + label_path.string() +
                                        "' exceeds " + std::to_string(max_label) + " for kind " + ds.kind);
            }
            item.source = static_cast<int>(kv.get_int(pre + "source", i));
            item.annotated = parse_ints(kv.get_string(pre + "annotated", ""), pre + "annotated");
            item.foreground = kv.get_bool(pre + "foreground", false);
            item.origin_organ = static_cast<int>(kv.get_int(pre + "origin_organ", 0));
            ds.items.push_back(std::move(item));
        }
        return ds;
    } catch (const ConfigError& e) {
        throw DataError("manifest '" + manifest_path.string() + "': " + e.what());
    } catch (const ShapeError& e) {
        throw DataError("dataset '" + dir.string() + "': " + e.what());
    }
}

} // namespace mskd::data
