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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mskd/baselines.hpp"
#include "mskd/checkpoint.hpp"
#include "mskd/io.hpp"
#include "mskd/losses.hpp"
#include "mskd/masks.hpp"
#include "mskd/metrics.hpp"
#include "mskd/training.hpp"
#include "oracles.hpp"

using namespace mskd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
    void require(bool ok, const std::string& what) {
        if (!ok && pass) detail = what;
        pass = pass && ok;
    }
};

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

// ---------------------------------------------------------------- 1
Outcome loss_oracles() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int K = 1 + trial % 3;
        const auto Kc = static_cast<std::size_t>(K) + 1;
        std::vector<Tensor<double>> teachers;
        for (int k = 0; k < K; ++k) teachers.push_back(oracle::random_probs(Shape{2, 4, 4}, rng, 0.1));
        const auto student = oracle::random_probs(Shape{Kc, 4, 4}, rng, 0.1);
        const auto target = oracle::random_probs(Shape{Kc, 4, 4}, rng, 0.3);
        const auto mask = oracle::random_mask(Shape{4, 4}, rng);
        const std::size_t C = 2 + pick(rng, 7);
        const auto tf = oracle::random_probs(Shape{C, 4, 4}, rng), sf = oracle::random_probs(Shape{C, 4, 4}, rng);
        std::vector<double> diffs{
            losses::masked_kl(target, student, mask) - oracle::masked_kl(target, student, mask),
            losses::background_logit_loss(teachers, student, mask, K) -
                oracle::background_logit_loss(teachers, student, mask),
            losses::sorted_feature_loss(tf, sf, mask) - oracle::sorted_feature_loss(tf, sf, mask)};
        for (int k = 1; k <= K; ++k) {
            const auto& t = teachers[static_cast<std::size_t>(k - 1)];
            diffs.push_back(losses::organ_logit_loss(t, student, mask, k, K) -
                            oracle::organ_logit_loss(t, student, mask, k, K));
        }
        for (double d : diffs) worst = std::max(worst, std::abs(d));
    }
    const double secs = seconds_since(t0);
    o.require(worst <= 1e-9, "max deviation above 1e-9");
    o.require(secs < 10, "slower than 10 s");
    char buf[128];
    std::snprintf(buf, sizeof buf, "200 instances, max |diff| %.3g, %.2f s", worst, secs);
    if (o.pass) o.detail = buf;
    else o.detail += std::string(" (") + buf + ")";
    return o;
}

// ---------------------------------------------------------------- 2
Outcome transfer_validity() {
    Outcome o;
    std::mt19937_64 rng(1002);
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = 1 + static_cast<int>(pick(rng, 5));
        const std::size_t H = 1 + pick(rng, 4), W = 1 + pick(rng, 4);
        std::vector<Tensor<double>> transferred;
        for (int k = 1; k <= K; ++k) {
            const auto p = oracle::random_probs(Shape{2, H, W}, rng, 0.05);
            const auto t = losses::transfer_logits(p, k, K);
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const auto want = oracle::transfer(oracle::pixel(p, y, x), k, K);
                    for (std::size_t c = 0; c < want.size(); ++c)
                        o.require(t(c, y, x) == want[c], "transfer differs from the channel mapping");
                }
            transferred.push_back(t);
        }
        const auto b = losses::background_signal(transferred);
        for (const Tensor<double>* t : std::initializer_list<const Tensor<double>*>{&b, &transferred.back()})
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    double s = 0;
                    for (std::size_t c = 0; c < t->dim(0); ++c) {
                        o.require((*t)(c, y, x) >= 0, "negative probability");
                        s += (*t)(c, y, x);
                    }
                    o.require(std::abs(s - 1) <= 1e-6, "pixel does not sum to 1");
                }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double mean0 = 0;
                for (const auto& t : transferred) mean0 += t(0, y, x);
                o.require(std::abs(b(0, y, x) - mean0 / K) <= 1e-15, "background signal is not the mean");
            }
    }
    if (o.pass) o.detail = "1000 random inputs";
    return o;
}

// ---------------------------------------------------------------- 3
Outcome gradient_check() {
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1003);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int K = 1 + trial % 3;
        const std::size_t Kc = static_cast<std::size_t>(K) + 1, C = 4;
        std::vector<Tensor<double>> tl, tf;
        for (int k = 0; k < K; ++k) {
            tl.push_back(oracle::random_tensor(Shape{2, 4, 4}, rng, 1.5));
            tf.push_back(oracle::random_tensor(Shape{C, 2, 2}, rng, 1.5));
        }
        const auto targets = losses::make_distill_targets(tl, tf, 1);
        const auto sl = oracle::random_tensor(Shape{Kc, 4, 4}, rng), sf = oracle::random_tensor(Shape{C, 2, 2}, rng);
        const losses::LossWeights w;
        losses::ObjectiveGradient g;
        losses::distillation_objective(targets, sl, sf, w, &g);
        const auto fl = oracle::finite_difference(
            [&](const Tensor<double>& x) { return losses::distillation_objective(targets, x, sf, w).total; }, sl, 1e-4);
        const auto ff = oracle::finite_difference(
            [&](const Tensor<double>& x) { return losses::distillation_objective(targets, sl, x, w).total; }, sf, 1e-4);
        LabelMap labels(Shape{4, 4});
        for (auto& v : labels.values()) v = static_cast<std::uint8_t>(pick(rng, Kc));
        Tensor<double> gs;
        losses::seg_loss_dice_ce(sl, labels, &gs);
        const auto fs_ = oracle::finite_difference(
            [&](const Tensor<double>& x) { return losses::seg_loss_dice_ce(x, labels); }, sl, 1e-4);
        worst = std::max({worst, oracle::max_rel_error(g.logits, fl), oracle::max_rel_error(g.features, ff),
                          oracle::max_rel_error(gs, fs_)});
    }
    const double secs = seconds_since(t0);
    o.require(worst <= 1e-3, "relative error above 1e-3");
    o.require(secs < 30, "slower than 30 s");
    char buf[128];
    std::snprintf(buf, sizeof buf, "20 instances, max rel error %.3g, %.2f s", worst, secs);
    o.detail = o.pass ? buf : o.detail + " (" + buf + ")";
    return o;
}

// ---------------------------------------------------------------- 4
Outcome mask_algebra() {
    Outcome o;
    std::mt19937_64 rng(1004);
    int failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = 1 + static_cast<int>(pick(rng, 4)), level = static_cast<int>(pick(rng, 3));
        const std::size_t H = (1 + pick(rng, 3)) << level << 1, W = (1 + pick(rng, 3)) << level << 1;
        std::vector<Tensor<double>> logits;
        for (int k = 0; k < K; ++k) {
            auto t = oracle::random_tensor(Shape{2, H, W}, rng);
            if (trial % 4 == 0) // exact ties must resolve to background
                for (std::size_t i = 0; i < H * W; i += 3) t[H * W + i] = t[i];
            logits.push_back(t);
        }
        const auto set = masks::build_region_masks(logits, level);
        bool ok = true;
        std::vector<Mask> organs;
        for (int k = 0; k < K; ++k) {
            const auto& m = set.organ_masks[static_cast<std::size_t>(k)];
            organs.push_back(oracle::binarize(logits[static_cast<std::size_t>(k)]));
            ok = ok && m == organs.back();
            for (std::size_t i = 0; i < H * W; ++i) ok = ok && (set.background_mask[i] * m[i] == 0);
            ok = ok && set.downsampled[static_cast<std::size_t>(k)] == oracle::downsample(m, level);
            // strictly increasing transforms applied to both logits keep the mask
            auto f = logits[static_cast<std::size_t>(k)];
            for (auto& v : f.values()) v = std::exp(v) + 3 * v;
            ok = ok && masks::binarize_prediction(f) == m;
        }
        ok = ok && set.background_mask == oracle::background(organs);
        failures += !ok;
    }
    o.require(failures == 0, std::to_string(failures) + " of 1000 cases failed");
    if (o.pass) o.detail = "1000 randomized cases, 0 failures";
    return o;
}

// ---------------------------------------------------------------- 5
Outcome metric_oracles() {
    Outcome o;
    auto pts = [](std::size_t h, std::size_t w, std::vector<std::pair<int, int>> p) {
        Mask m(Shape{h, w});
        for (auto [y, x] : p) m(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
        return m;
    };
    const auto a = pts(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    o.require(metrics::dsc(a, a) == 1.0, "dsc identity example");
    o.require(metrics::dsc(a, pts(4, 4, {{3, 3}})) == 0.0, "dsc disjoint example");
    o.require(metrics::dsc(a, pts(4, 4, {{0, 0}, {0, 1}, {3, 2}, {3, 3}})) == 0.5, "dsc 0.5 example");
    o.require(metrics::dsc(Mask(Shape{3, 3}), Mask(Shape{3, 3})) == 1.0, "dsc empty example");
    o.require(*metrics::hausdorff(a, a) == 0.0, "hd identity example");
    o.require(std::abs(*metrics::hausdorff(pts(4, 5, {{0, 0}}), pts(4, 5, {{3, 4}})) - 5.0) <= 1e-9, "hd 5 example");
    o.require(!metrics::hausdorff(a, Mask(Shape{4, 4})).has_value(), "hd empty example");

    std::mt19937_64 rng(1005);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t H = 2 + pick(rng, 10), W = 2 + pick(rng, 10);
        const double p = 0.05 + 0.4 * static_cast<double>(pick(rng, 100)) / 100;
        const auto m1 = oracle::random_mask(Shape{H, W}, rng, p), m2 = oracle::random_mask(Shape{H, W}, rng, p);
        o.require(metrics::dsc(m1, m2) == metrics::dsc(m2, m1), "dsc symmetry");
        o.require(metrics::dsc(m1, m2) == oracle::dsc(m1, m2), "dsc oracle");
        o.require(metrics::dsc(m1, m1) == 1.0, "dsc self");
        const auto h12 = metrics::hausdorff(m1, m2), h21 = metrics::hausdorff(m2, m1), ho = oracle::hausdorff(m1, m2);
        o.require(h12.has_value() == h21.has_value() && h12.has_value() == ho.has_value(), "hd definedness");
        if (h12) {
            o.require(*h12 == *h21, "hd symmetry");
            o.require(std::abs(*h12 - *ho) <= 1e-9, "hd oracle");
        }
        if (const auto self = metrics::hausdorff(m1, m1)) o.require(*self == 0.0, "hd self");
    }
    if (o.pass) o.detail = "crafted examples exact, 500 random pairs";
    return o;
}

// ---------------------------------------------------------------- 6
// Desk-scale benchmark: 3 organs, 200 train / 50 test at 64×64, shared
// images, depth 3. Width and iteration budget are the desk-scale settings.
constexpr int kSeeds[] = {1, 2, 3};
constexpr int kEpochs = 30;
constexpr int kItersPerEpoch = 25;
constexpr int kWidth = 8;

struct SeedResult {
    double individual = 0, lwfw = 0, lw = 0, pseudo = 0;
    std::vector<double> teacher_dsc;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SeedResult run_benchmark(int seed) {
    data::SynthConfig sc;
    sc.seed = static_cast<std::uint64_t>(seed);
    const auto corpus = data::generate_synthetic_dataset(sc);
    const auto bins = data::derive_binary_datasets(corpus.train, false);
    const auto uni = data::make_union(bins);
    training::TrainConfig tc;
    tc.max_epochs = kEpochs;
    tc.iters_per_epoch = kItersPerEpoch;
    model::ModelConfig mc;
    mc.base_width = kWidth;

    SeedResult r;
    std::vector<model::SegModel> teachers;
    for (int k = 1; k <= 3; ++k) {
        auto c = tc;
        c.seed = static_cast<std::uint64_t>(seed * 10 + k);
        teachers.push_back(training::train_teacher(bins[static_cast<std::size_t>(k - 1)], mc, c).model);
        // held-out binary DSC of this teacher on its own organ
        auto test_bin = data::derive_binary_dataset(corpus.test, k);
        test_bin.num_organs = 1; // labels are 0/1 for this organ
        const auto row = metrics::evaluate_model("t", teachers.back(), test_bin);
        r.teacher_dsc.push_back(row.organs[0].dsc_percent / 100);
    }
    r.individual = baselines::evaluate_merged_teachers(teachers, corpus.test).average.dsc_percent;
    auto sm = mc;
    sm.out_channels = 4;
    auto dc = tc;
    dc.seed = static_cast<std::uint64_t>(seed * 10 + 5);
    r.lwfw = metrics::evaluate_model("s", training::distill_student(teachers, uni, sm, dc).model, corpus.test)
                 .average.dsc_percent;
    dc.weights.lambda2 = 0;
    r.lw = metrics::evaluate_model("s", training::distill_student(teachers, uni, sm, dc).model, corpus.test)
               .average.dsc_percent;
    dc.weights.lambda2 = 10;
    r.pseudo = metrics::evaluate_model("s", baselines::hard_pseudo_label_distill(teachers, uni, sm, dc).model,
                                       corpus.test)
                   .average.dsc_percent;
    return r;
}

Outcome qualitative_ordering() {
    Outcome o;
    const auto t0 = Clock::now();
    std::vector<double> ind, lwfw, lw, pseudo;
    for (int seed : kSeeds) {
        const auto ts = Clock::now();
        const auto r = run_benchmark(seed);
        std::printf("  seed %d: Individual %.2f  LW+FW %.2f  LW %.2f  Pseudo-label %.2f  teacher DSC %.3f %.3f %.3f  "
                    "(%.0f s)\n",
                    seed, r.individual, r.lwfw, r.lw, r.pseudo, r.teacher_dsc[0], r.teacher_dsc[1], r.teacher_dsc[2],
                    seconds_since(ts));
        std::fflush(stdout);
        ind.push_back(r.individual);
        lwfw.push_back(r.lwfw);
        lw.push_back(r.lw);
        pseudo.push_back(r.pseudo);
        o.require(r.lwfw >= r.individual - 1.0, "seed " + std::to_string(seed) + ": LW+FW below Individual - 1.0");
    }
    const double m_ind = median(ind), m_lwfw = median(lwfw), m_lw = median(lw);
    o.require(m_lwfw >= m_ind, "median LW+FW below median Individual");
    o.require(m_lwfw >= m_lw - 0.5, "median LW+FW below median LW - 0.5");
    const double secs = seconds_since(t0);
    o.require(secs <= 20 * 60, "slower than 20 minutes");
    char buf[200];
    std::snprintf(buf, sizeof buf, "medians: Individual %.2f, LW+FW %.2f, LW %.2f, Pseudo-label %.2f; %.0f s", m_ind,
                  m_lwfw, m_lw, median(pseudo), secs);
    o.detail = o.pass ? buf : o.detail + " (" + buf + ")";
    return o;
}

// ---------------------------------------------------------------- 7
Outcome frozen_and_blind() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / "mskd_accept_7";
    fs::remove_all(root);
    const auto corpus = data::generate_synthetic_dataset(fixtures::tiny_synth(3, 16, 4));
    const auto bins = data::derive_binary_datasets(corpus.train, false);
    for (std::size_t k = 0; k < bins.size(); ++k) data::write_dataset(root / ("organ-" + std::to_string(k + 1)), bins[k]);

    std::vector<model::SegModel> teachers = fixtures::quick_teachers(bins);
    for (std::size_t k = 0; k < teachers.size(); ++k)
        model::save_checkpoint(root / ("t" + std::to_string(k + 1) + ".ckpt"), teachers[k]);
    auto load_teachers = [&] {
        std::vector<model::SegModel> t;
        for (std::size_t k = 0; k < bins.size(); ++k)
            t.push_back(model::load_checkpoint(root / ("t" + std::to_string(k + 1) + ".ckpt")).model);
        return t;
    };
    auto distill_from_disk = [&] {
        std::vector<data::Dataset> parts;
        for (std::size_t k = 0; k < bins.size(); ++k)
            parts.push_back(data::load_dataset(root / ("organ-" + std::to_string(k + 1)), true));
        const auto t = load_teachers();
        const auto r = training::distill_student(t, data::make_union(parts), fixtures::tiny_model(4), fixtures::quick(3, 4));
        return model::encode_checkpoint(r.model, &r.optimizer);
    };

    std::vector<std::vector<char>> before;
    for (std::size_t k = 0; k < bins.size(); ++k) before.push_back(io::read_file(root / ("t" + std::to_string(k + 1) + ".ckpt")));
    const auto reference = distill_from_disk();
    const auto after = load_teachers();
    for (std::size_t k = 0; k < bins.size(); ++k) {
        o.require(io::read_file(root / ("t" + std::to_string(k + 1) + ".ckpt")) == before[k], "teacher file changed");
        o.require(model::encode_checkpoint(after[k], nullptr) == before[k], "teacher parameters changed");
    }
    // In-memory teachers used directly must also stay bitwise identical.
    std::vector<std::vector<char>> live;
    for (const auto& t : teachers) live.push_back(model::encode_checkpoint(t, nullptr));
    training::distill_student(teachers, data::make_union(bins), fixtures::tiny_model(4), fixtures::quick(1, 2));
    for (std::size_t k = 0; k < teachers.size(); ++k)
        o.require(model::encode_checkpoint(teachers[k], nullptr) == live[k], "in-memory teacher changed");

    // Permute label files across items of every organ directory.
    for (std::size_t k = 0; k < bins.size(); ++k) {
        const auto dir = root / ("organ-" + std::to_string(k + 1));
        const auto manifest = io::KeyValues::load(dir / "manifest.txt");
        const std::size_t n = bins[k].items.size();
        std::vector<std::vector<char>> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(io::read_file(dir / manifest.get("item." + std::to_string(i) + ".label")));
        for (std::size_t i = 0; i < n; ++i)
            io::write_file(dir / manifest.get("item." + std::to_string(i) + ".label"), labels[(i + 5) % n]);
    }
    o.require(distill_from_disk() == reference, "student changed after permuting label files");
    fs::remove_all(root);
    if (o.pass) o.detail = "teacher checkpoints bitwise unchanged; student identical after label permutation";
    return o;
}

// ---------------------------------------------------------------- 8
std::string pipeline_report() {
    const auto corpus = data::generate_synthetic_dataset(fixtures::tiny_synth(3, 12, 6));
    const auto bins = data::derive_binary_datasets(corpus.train, false);
    const auto uni = data::make_union(bins);
    const auto teachers = fixtures::quick_teachers(bins);
    metrics::MetricsReport rep;
    rep.num_organs = 3;
    rep.rows.push_back(baselines::evaluate_merged_teachers(teachers, corpus.test));
    rep.rows.push_back(metrics::evaluate_model(
        "MS-KD (LW+FW)", training::distill_student(teachers, uni, fixtures::tiny_model(4), fixtures::quick()).model,
        corpus.test));
    return metrics::format_csv(rep) + metrics::format_table(rep);
}

Outcome determinism_and_persistence() {
    Outcome o;
    o.require(pipeline_report() == pipeline_report(), "reports differ between identical runs");
    const fs::path path = fs::temp_directory_path() / "mskd_accept_8.ckpt";
    auto m = model::SegModel::build(fixtures::tiny_model(4), 5);
    const auto x = data::image_batch(data::generate_synthetic_dataset(fixtures::tiny_synth(3, 4, 0)).train,
                                     std::vector<std::size_t>{0, 1, 2, 3});
    model::save_checkpoint(path, m);
    const auto back = model::load_checkpoint(path).model;
    const auto a = m.forward(x), b = back.forward(x);
    o.require(a.logits == b.logits && a.features == b.features, "reloaded model predicts differently");
    fs::remove(path);
    if (o.pass) o.detail = "byte-identical reports; bitwise-equal predictions after reload";
    return o;
}

// ---------------------------------------------------------------- 9
Outcome schedule_rule() {
    Outcome o;
    using training::lr_schedule_step;
    o.require(lr_schedule_step(0.500, 0.499, 3e-4) == 3e-4, "reduction of exactly 1e-3 decayed");
    const double decayed = lr_schedule_step(0.500, 0.4995, 3e-4);
    o.require(decayed == 3e-4 * 0.8, "reduction below 1e-3 did not multiply by 0.8");
    // 3e-4 * 0.8 in binary64 is the neighbour of the literal 2.4e-4.
    o.require(std::abs(decayed - 2.4e-4) <= std::nextafter(2.4e-4, 1.0) - 2.4e-4, "decayed rate is not 2.4e-4");
    o.require(lr_schedule_step(std::nullopt, 0.1, 3e-4) == 3e-4, "first epoch decayed");
    o.require(lr_schedule_step(0.5, 0.7, 3e-4) == 3e-4 * 0.8, "loss increase did not decay");
    if (o.pass) o.detail = "boundary keeps rate; 3e-4 -> 2.4e-4 (within 1 ulp)";
    return o;
}

} // namespace

// Optional arguments select criterion numbers; default is all of them.
int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "loss-oracle equivalence", loss_oracles},
        {2, "transfer/background-signal validity", transfer_validity},
        {3, "gradient check", gradient_check},
        {4, "mask algebra", mask_algebra},
        {5, "metric oracles", metric_oracles},
        {6, "end-to-end qualitative ordering", qualitative_ordering},
        {7, "frozen teachers and label-blindness", frozen_and_blind},
        {8, "determinism and persistence", determinism_and_persistence},
        {9, "schedule rule", schedule_rule},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        std::printf("criterion %d (%s): %s: %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
