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

#include "mskd/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "mskd/checkpoint.hpp"

namespace mskd::training {

namespace {

constexpr std::uint64_t kInitStream = 101;
constexpr std::uint64_t kSamplingStream = 102;

void require_positive(double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive, got " + io::format_double(v));
}

bool finite(double v) { return std::isfinite(v); }

bool all_finite(const Tensor<float>& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](float v) { return std::isfinite(v); });
}

constexpr double kDiverged = std::numeric_limits<double>::quiet_NaN();

// Copies item b of a B×C×H×W float tensor into a C×H×W double tensor.
Tensor<double> item_double(const Tensor<float>& batch, std::size_t b) {
    return tensor_cast<double>(batch_item(batch, b));
}

// Writes a C×H×W double gradient, scaled, into slot b of a batched float tensor.
void put_item(Tensor<float>& batch, std::size_t b, const Tensor<double>& g, double scale) {
    const std::size_t n = g.size();
    float* out = batch.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(g[i] * scale);
}

struct EpochAccumulator {
    double loss = 0, supervised = 0, background = 0;
    std::vector<double> organ, feature;
    int iters = 0;

    void add(const losses::LossBreakdown& b) {
        if (organ.empty()) organ.assign(b.per_organ_logit.size(), 0.0), feature.assign(b.per_organ_feature.size(), 0.0);
        for (std::size_t k = 0; k < organ.size(); ++k) organ[k] += b.per_organ_logit[k], feature[k] += b.per_organ_feature[k];
        background += b.background_logit;
    }
};

// Shared epoch/schedule loop. `step` runs one iteration at the given rate
// and returns the mean loss of its batch.
template <typename Step>
TrainResult run_schedule(model::SegModel model, const TrainConfig& config, Step&& step, const EpochCallback& on_epoch,
                         EpochAccumulator& acc) {
    TrainResult result{std::move(model), {}, {}};
    result.optimizer = model::AdamState<float>::for_model(result.model);
    std::mt19937_64 rng(config.sampling_seed());
    double lr = config.initial_lr;
    std::optional<double> prev;
    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        acc = EpochAccumulator{};
        for (int it = 0; it < config.iters_per_epoch; ++it) {
            const double loss = step(result, rng, lr, epoch, it);
            if (!finite(loss))
                throw TrainingFailure("loss became non-finite at epoch " + std::to_string(epoch) + ", iteration " +
                                          std::to_string(it),
                                      epoch, it);
            acc.loss += loss;
            ++acc.iters;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.loss = acc.loss / acc.iters;
        rec.supervised = acc.supervised / acc.iters;
        if (!acc.organ.empty()) {
            for (auto& v : acc.organ) v /= acc.iters;
            for (auto& v : acc.feature) v /= acc.iters;
            rec.breakdown.per_organ_logit = acc.organ;
            rec.breakdown.per_organ_feature = acc.feature;
            rec.breakdown.background_logit = acc.background / acc.iters;
            rec.breakdown.total = rec.loss - rec.supervised;
        }
        result.curve.push_back(rec);
        if (on_epoch) on_epoch(rec);
        lr = lr_schedule_step(prev, rec.loss, lr, config.lr_decay_factor, config.lr_decay_trigger);
        prev = rec.loss;
    }
    return result;
}

} // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (iters_per_epoch < 1) throw ConfigError("train.iters_per_epoch must be >= 1");
    if (max_epochs < 0) throw ConfigError("train.max_epochs must be >= 0");
    require_positive(initial_lr, "train.initial_lr");
    if (!(lr_decay_factor > 0 && lr_decay_factor < 1)) throw ConfigError("train.lr_decay_factor must lie in (0, 1)");
    if (!(lr_decay_trigger >= 0) || !std::isfinite(lr_decay_trigger))
        throw ConfigError("train.lr_decay_trigger must be finite and >= 0");
    if (!(fg_fraction >= 0 && fg_fraction <= 1)) throw ConfigError("train.fg_fraction must lie in [0, 1]");
    weights.validate();
}

TrainConfig TrainConfig::from_keys(const io::KeyValues& kv) {
    TrainConfig c;
    c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
    c.iters_per_epoch = static_cast<int>(kv.get_int("train.iters_per_epoch", c.iters_per_epoch));
    c.max_epochs = static_cast<int>(kv.get_int("train.max_epochs", c.max_epochs));
    c.initial_lr = kv.get_double("train.initial_lr", c.initial_lr);
    c.lr_decay_factor = kv.get_double("train.lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_trigger = kv.get_double("train.lr_decay_trigger", c.lr_decay_trigger);
    c.fg_fraction = kv.get_double("train.fg_fraction", c.fg_fraction);
    const long long seed = kv.get_int("train.seed", static_cast<long long>(c.seed));
    if (seed < 0) throw ConfigError("train.seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    c.mixed_supervision = kv.get_bool("train.mixed_supervision", c.mixed_supervision);
    c.weights.lambda1 = kv.get_double("loss.lambda1", c.weights.lambda1);
    c.weights.lambda2 = kv.get_double("loss.lambda2", c.weights.lambda2);
    c.validate();
    return c;
}

void TrainConfig::to_keys(io::KeyValues& kv) const {
    kv.set("train.batch_size", batch_size);
    kv.set("train.iters_per_epoch", iters_per_epoch);
    kv.set("train.max_epochs", max_epochs);
    kv.set("train.initial_lr", initial_lr);
    kv.set("train.lr_decay_factor", lr_decay_factor);
    kv.set("train.lr_decay_trigger", lr_decay_trigger);
    kv.set("train.fg_fraction", fg_fraction);
    kv.set("train.seed", static_cast<long long>(seed));
    kv.set("train.mixed_supervision", mixed_supervision);
    kv.set("loss.lambda1", weights.lambda1);
    kv.set("loss.lambda2", weights.lambda2);
}

std::uint64_t TrainConfig::init_seed() const { return data::derive_seed(seed, kInitStream); }
std::uint64_t TrainConfig::sampling_seed() const { return data::derive_seed(seed, kSamplingStream); }

model::ModelConfig model_config_from_keys(const io::KeyValues& kv, int out_channels) {
    model::ModelConfig c;
    c.out_channels = out_channels;
    c.depth = static_cast<int>(kv.get_int("model.depth", c.depth));
    c.base_width = static_cast<int>(kv.get_int("model.base_width", c.base_width));
    c.feature_tap_level = static_cast<int>(kv.get_int("model.feature_tap_level", c.feature_tap_level));
    c.validate();
    return c;
}

void model_config_to_keys(const model::ModelConfig& config, io::KeyValues& kv) {
    kv.set("model.depth", config.depth);
    kv.set("model.base_width", config.base_width);
    kv.set("model.feature_tap_level", config.feature_tap_level);
}

double lr_schedule_step(std::optional<double> prev_epoch_loss, double curr_epoch_loss, double lr, double factor,
                        double trigger) {
    if (!prev_epoch_loss) return lr;
    return *prev_epoch_loss - curr_epoch_loss < trigger ? lr * factor : lr;
}

TrainResult train_supervised(const data::Dataset& dataset, const model::ModelConfig& model_config,
                             const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    model_config.validate();
    if (dataset.items.empty()) throw DataError("training dataset is empty");
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const auto& label = dataset.items[i].label;
        if (label.empty()) throw DataError("item " + std::to_string(i) + " has no label loaded");
        for (auto v : label.values())
            if (v >= model_config.out_channels)
                throw DataError("item " + std::to_string(i) + " has label " + std::to_string(v) + " but the model has " +
                                std::to_string(model_config.out_channels) + " classes");
    }
    model_config.check_input(Shape{1, static_cast<std::size_t>(model_config.in_channels),
                                   static_cast<std::size_t>(dataset.image_size),
                                   static_cast<std::size_t>(dataset.image_size)});

    EpochAccumulator acc;
    auto step = [&](TrainResult& r, std::mt19937_64& rng, double lr, int, int) {
        const auto idx = data::sample_batch(dataset, config.batch_size, config.fg_fraction, rng);
        model::Tape<float> tape;
        const auto out = r.model.forward(data::image_batch(dataset, idx), &tape);
        if (!all_finite(out.logits)) return kDiverged;
        Tensor<float> grad(out.logits.shape());
        const double scale = 1.0 / static_cast<double>(idx.size());
        double loss = 0;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            Tensor<double> g;
            loss += losses::seg_loss_dice_ce(item_double(out.logits, b), dataset.items[idx[b]].label, &g);
            put_item(grad, b, g, scale);
        }
        loss *= scale;
        if (!finite(loss)) return loss;
        const auto grads = r.model.backward(tape, grad, nullptr);
        model::apply_update(r.model, r.optimizer, grads, lr);
        return loss;
    };
    return run_schedule(model::SegModel::build(model_config, config.init_seed()), config, step, on_epoch, acc);
}

TrainResult train_teacher(const data::Dataset& binary_dataset, const model::ModelConfig& model_config,
                          const TrainConfig& config, const EpochCallback& on_epoch) {
    if (!binary_dataset.is_binary())
        throw DataError("teachers train on binary-organ datasets, got kind '" + binary_dataset.kind + "'");
    if (model_config.out_channels != 2)
        throw ConfigError("a teacher has 2 output classes, got " + std::to_string(model_config.out_channels));
    return train_supervised(binary_dataset, model_config, config, on_epoch);
}

TeacherOutputs run_teachers(std::span<const model::SegModel> teachers, const Tensor<float>& batch) {
    TeacherOutputs out;
    const std::size_t B = batch.dim(0);
    out.logits.resize(B);
    out.features.resize(B);
    for (const auto& t : teachers) {
        const auto r = t.forward(batch);
        for (std::size_t b = 0; b < B; ++b) {
            out.logits[b].push_back(item_double(r.logits, b));
            out.features[b].push_back(item_double(r.features, b));
        }
    }
    return out;
}

void check_teacher_compatibility(std::span<const model::SegModel> teachers, const model::ModelConfig& student) {
    if (teachers.empty()) throw InvalidInputError("distillation needs at least one teacher");
    if (student.out_channels != static_cast<int>(teachers.size()) + 1)
        throw ConfigError("student has " + std::to_string(student.out_channels) + " output classes for " +
                          std::to_string(teachers.size()) + " teachers (expected " +
                          std::to_string(teachers.size() + 1) + ")");
    for (std::size_t k = 0; k < teachers.size(); ++k) {
        const auto& got = teachers[k].config();
        const std::string who = "teacher " + std::to_string(k + 1);
        if (got.out_channels != 2)
            throw ConfigError(who + " has " + std::to_string(got.out_channels) + " output classes, expected 2");
        if (got.channels_at(student.feature_tap_level) != student.tap_channels())
            throw ConfigError(who + " feature tap has " + std::to_string(got.channels_at(student.feature_tap_level)) +
                              " channels, student has " + std::to_string(student.tap_channels()));
        if (got.in_channels != student.in_channels || got.depth != student.depth)
            throw ConfigError(who + " architecture differs from the student's");
    }
}

TrainResult distill_student(std::span<const model::SegModel> teachers, const data::Dataset& union_dataset,
                            const model::ModelConfig& model_config, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
    config.validate();
    model_config.validate();
    check_teacher_compatibility(teachers, model_config);
    if (union_dataset.items.empty()) throw DataError("distillation image union is empty");
    if (union_dataset.num_organs != 0 && union_dataset.num_organs != static_cast<int>(teachers.size()))
        throw ConfigError("union covers " + std::to_string(union_dataset.num_organs) + " organs but " +
                          std::to_string(teachers.size()) + " teachers were given");
    if (config.mixed_supervision)
        for (const auto& item : union_dataset.items)
            if (item.label.empty()) throw DataError("mixed supervision needs the union's labels loaded");
    const int K = static_cast<int>(teachers.size());
    const int level = model_config.feature_tap_level;
    // Teachers are read-only; copies only retarget which decoder map they return.
    std::vector<model::SegModel> tapped(teachers.begin(), teachers.end());
    for (auto& t : tapped) t.set_feature_tap_level(level);

    // Frozen teachers see every distinct image many times; their outputs
    // are memoised per image. Forwards are per-item independent, so the
    // values are exactly those a per-batch forward would give.
    const std::size_t N = union_dataset.items.size();
    std::vector<std::size_t> canonical(N);
    {
        std::map<int, std::vector<std::size_t>> by_source;
        for (std::size_t i = 0; i < N; ++i) {
            canonical[i] = i;
            auto& seen = by_source[union_dataset.items[i].source];
            for (auto j : seen)
                if (union_dataset.items[j].image == union_dataset.items[i].image) {
                    canonical[i] = j;
                    break;
                }
            if (canonical[i] == i) seen.push_back(i);
        }
    }
    struct Cached {
        std::vector<Tensor<float>> logits, features;
    };
    std::vector<std::optional<Cached>> cache(N);
    auto teacher_outputs = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::size_t> missing;
        for (auto i : idx)
            if (!cache[canonical[i]] && std::find(missing.begin(), missing.end(), canonical[i]) == missing.end())
                missing.push_back(canonical[i]);
        if (!missing.empty()) {
            const Tensor<float> images = data::image_batch(union_dataset, missing);
            std::vector<Cached> fresh(missing.size());
            for (const auto& t : tapped) {
                const auto r = t.forward(images);
                for (std::size_t m = 0; m < missing.size(); ++m) {
                    fresh[m].logits.push_back(batch_item(r.logits, m));
                    fresh[m].features.push_back(batch_item(r.features, m));
                }
            }
            for (std::size_t m = 0; m < missing.size(); ++m) cache[missing[m]] = std::move(fresh[m]);
        }
        TeacherOutputs out;
        for (auto i : idx) {
            const auto& c = *cache[canonical[i]];
            out.logits.emplace_back();
            out.features.emplace_back();
            for (std::size_t k = 0; k < c.logits.size(); ++k) {
                out.logits.back().push_back(tensor_cast<double>(c.logits[k]));
                out.features.back().push_back(tensor_cast<double>(c.features[k]));
            }
        }
        return out;
    };

    EpochAccumulator acc;
    auto step = [&](TrainResult& r, std::mt19937_64& rng, double lr, int, int) {
        const auto idx = data::sample_batch(union_dataset, config.batch_size, config.fg_fraction, rng);
        const Tensor<float> images = data::image_batch(union_dataset, idx);
        model::Tape<float> tape;
        const auto out = r.model.forward(images, &tape);
        if (!all_finite(out.logits) || !all_finite(out.features)) return kDiverged;
        const TeacherOutputs t = teacher_outputs(idx);
        Tensor<float> grad_logits(out.logits.shape()), grad_features(out.features.shape());
        const double scale = 1.0 / static_cast<double>(idx.size());
        double loss = 0;
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto targets = losses::make_distill_targets(t.logits[b], t.features[b], level);
            losses::ObjectiveGradient g;
            const Tensor<double> logits = item_double(out.logits, b);
            auto breakdown =
                losses::distillation_objective(targets, logits, item_double(out.features, b), config.weights, &g);
            loss += breakdown.total;
            for (auto& v : breakdown.per_organ_logit) v *= scale;
            for (auto& v : breakdown.per_organ_feature) v *= scale;
            breakdown.background_logit *= scale;
            acc.add(breakdown);

            if (config.mixed_supervision) {
                // Cross entropy toward class k on the pixels this image's own
                // annotation marks as organ k, normalised by the pixel count.
                const auto& item = union_dataset.items[idx[b]];
                const auto probs = losses::softmax_channels(logits);
                const std::size_t HW = item.label.size();
                const auto k = static_cast<std::size_t>(item.origin_organ);
                double ce = 0;
                for (std::size_t i = 0; i < HW; ++i) {
                    if (!item.label[i] || k == 0) continue;
                    ce -= std::log(std::max(probs[k * HW + i], losses::kProbFloor));
                    for (std::size_t c = 0; c <= static_cast<std::size_t>(K); ++c)
                        g.logits[c * HW + i] += (probs[c * HW + i] - (c == k ? 1.0 : 0.0)) / static_cast<double>(HW);
                }
                ce /= static_cast<double>(HW);
                loss += ce;
                acc.supervised += ce * scale;
            }
            put_item(grad_logits, b, g.logits, scale);
            put_item(grad_features, b, g.features, scale);
        }
        loss *= scale;
        if (!finite(loss)) return loss;
        const auto grads = r.model.backward(tape, grad_logits, config.weights.lambda2 != 0 ? &grad_features : nullptr);
        model::apply_update(r.model, r.optimizer, grads, lr);
        return loss;
    };
    return run_schedule(model::SegModel::build(model_config, config.init_seed()), config, step, on_epoch, acc);
}

std::string format_epoch_record(const EpochRecord& r) {
    std::ostringstream out;
    out << "epoch=" << r.epoch << " lr=" << io::format_double(r.lr) << " loss=" << io::format_double(r.loss);
    if (!r.breakdown.per_organ_logit.empty()) {
        for (std::size_t k = 0; k < r.breakdown.per_organ_logit.size(); ++k)
            out << " organ" << k + 1 << "_logit=" << io::format_double(r.breakdown.per_organ_logit[k]);
        out << " background_logit=" << io::format_double(r.breakdown.background_logit);
        for (std::size_t k = 0; k < r.breakdown.per_organ_feature.size(); ++k)
            out << " organ" << k + 1 << "_feature=" << io::format_double(r.breakdown.per_organ_feature[k]);
        out << " total=" << io::format_double(r.breakdown.total);
    }
    if (r.supervised != 0) out << " supervised=" << io::format_double(r.supervised);
    return out.str();
}

void write_run(const std::filesystem::path& dir, const TrainResult& result, const io::KeyValues& config_snapshot,
               const TrainConfig& config, const RunInfo& info) {
    std::filesystem::create_directories(dir);
    config_snapshot.save(dir / "config.txt");

    io::KeyValues seeds;
    seeds.set("train.seed", static_cast<long long>(config.seed));
    seeds.set("init_seed", std::to_string(config.init_seed()));
    seeds.set("sampling_seed", std::to_string(config.sampling_seed()));
    seeds.save(dir / "seeds.txt");

    std::string log;
    for (const auto& rec : result.curve) log += format_epoch_record(rec) + "\n";
    io::write_text(dir / "log.txt", log);

    model::save_checkpoint(dir / "model.ckpt", result.model, &result.optimizer);

    io::KeyValues run;
    run.set("method", info.method);
    run.set("epochs", static_cast<int>(result.curve.size()));
    for (const auto& note : info.notes) {
        const auto eq = note.find('=');
        if (eq == std::string::npos) throw InvalidInputError("run note '" + note + "' is not key=value");
        run.set(note.substr(0, eq), note.substr(eq + 1));
    }
    run.save(dir / "run.txt");
}

} // namespace mskd::training
