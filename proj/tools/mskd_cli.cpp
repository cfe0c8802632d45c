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

// mskd: data generation, teacher training, distillation, baselines,
// evaluation and reporting.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mskd/baselines.hpp"
#include "mskd/checkpoint.hpp"
#include "mskd/data.hpp"
#include "mskd/io.hpp"
#include "mskd/losses.hpp"
#include "mskd/metrics.hpp"
#include "mskd/training.hpp"

namespace fs = std::filesystem;
using namespace mskd;

namespace {

constexpr const char* kLabelIndividual = "Individual";
constexpr const char* kLabelFull = "MS-KD (LW+FW)";
constexpr const char* kLabelLW = "LW";
constexpr const char* kLabelPseudo = "Pseudo-label";

io::KeyValues load_config(const std::optional<std::string>& path) {
    if (!path) return {};
    if (!fs::exists(*path)) throw ConfigError("config file '" + *path + "' does not exist");
    return io::KeyValues::load(*path);
}

fs::path organ_dir(const fs::path& root, int k) { return root / ("organ-" + std::to_string(k)); }

// A dataset directory, or a gen-data root whose `sub` directory is wanted.
fs::path resolve_dataset(const fs::path& dir, const char* sub) {
    if (fs::exists(dir / "manifest.txt")) return dir;
    if (fs::exists(dir / sub / "manifest.txt")) return dir / sub;
    throw DataError("no dataset manifest in '" + dir.string() + "' or '" + (dir / sub).string() + "'");
}

std::vector<model::SegModel> load_teachers(const std::vector<std::string>& paths) {
    std::vector<model::SegModel> out;
    for (const auto& p : paths) out.push_back(model::load_checkpoint_expecting(p, 2).model);
    return out;
}

// Binary datasets organ-1..organ-K under a gen-data root, concatenated.
data::Dataset load_union(const fs::path& root, int num_teachers, bool with_labels) {
    std::vector<data::Dataset> parts;
    for (int k = 1; k <= num_teachers; ++k) {
        auto d = data::load_dataset(organ_dir(root, k), with_labels);
        if (d.kind != "binary-organ-" + std::to_string(k))
            throw DataError("'" + organ_dir(root, k).string() + "' holds a " + d.kind + " dataset");
        parts.push_back(std::move(d));
    }
    auto u = data::make_union(parts);
    u.num_organs = num_teachers;
    return u;
}

void progress(const training::EpochRecord& r) { std::cerr << training::format_epoch_record(r) << '\n'; }

io::KeyValues snapshot(const data::SynthConfig* synth, const model::ModelConfig* mc, const training::TrainConfig* tc) {
    io::KeyValues kv;
    if (synth) synth->to_keys(kv);
    if (mc) training::model_config_to_keys(*mc, kv);
    if (tc) tc->to_keys(kv);
    return kv;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

std::string method_of(const fs::path& checkpoint) {
    const auto run = checkpoint.parent_path() / "run.txt";
    if (fs::exists(run)) {
        if (auto m = io::KeyValues::load(run).find("method")) return *m;
    }
    return "Student";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-teacher single-student distillation for partially labelled multi-organ segmentation"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::string out, data_dir;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-organ corpus and its binary subsets");
    gen->add_option("--config", config_path, "key=value config file");
    gen->add_option("--out", out, "output directory")->required();

    int organ = 0;
    auto* teach = app.add_subcommand("train-teacher", "train a binary single-organ teacher");
    teach->add_option("--organ", organ, "organ index 1..K")->required();
    teach->add_option("--data", data_dir, "gen-data output directory")->required();
    teach->add_option("--config", config_path);
    teach->add_option("--out", out, "run directory")->required();

    std::vector<std::string> teacher_paths;
    bool no_feature = false, mixed = false;
    std::optional<double> lambda1, lambda2;
    std::optional<int> feature_level;
    auto* distill = app.add_subcommand("distill", "region-based logits- and feature-wise distillation");
    distill->add_option("--teachers", teacher_paths, "teacher checkpoints, organ order")->required();
    distill->add_option("--data", data_dir)->required();
    distill->add_option("--config", config_path);
    distill->add_option("--out", out)->required();
    distill->add_flag("--no-feature-loss", no_feature, "logits-wise only (LW)");
    distill->add_option("--lambda1", lambda1);
    distill->add_option("--lambda2", lambda2);
    distill->add_option("--feature-level", feature_level);
    distill->add_flag("--mixed-supervision", mixed, "also use each image's own annotation");

    auto* hard = app.add_subcommand("distill-hard", "student trained on merged hard pseudo-labels");
    hard->add_option("--teachers", teacher_paths)->required();
    hard->add_option("--data", data_dir)->required();
    hard->add_option("--config", config_path);
    hard->add_option("--out", out)->required();

    std::optional<std::string> model_path, label;
    std::vector<std::string> merge_paths;
    auto* eval = app.add_subcommand("eval", "score a model or the merged teachers on the multi-organ test set");
    auto* model_opt = eval->add_option("--model", model_path, "student checkpoint");
    auto* merge_opt = eval->add_option("--merge-teachers", merge_paths, "teacher checkpoints, organ order");
    model_opt->excludes(merge_opt);
    eval->add_option("--data", data_dir)->required();
    eval->add_option("--out", out, "CSV report path")->required();
    eval->add_option("--label", label, "method name for the report row");

    std::vector<std::string> runs;
    auto* report = app.add_subcommand("report", "merge report rows into one comparison table");
    report->add_option("--runs", runs, "CSV reports or directories containing report.csv")->required();
    report->add_option("--out", out, "table path; a merged CSV is written next to it")->required();

    std::string teacher_path, image_path;
    double clip_lo = -325, clip_hi = 325;
    auto* unc = app.add_subcommand("uncertainty", "teacher uncertainty map as a grayscale PNG");
    unc->add_option("--teacher", teacher_path)->required();
    unc->add_option("--image", image_path, "raw-intensity image tensor (.mskt)")->required();
    unc->add_option("--out", out)->required();
    unc->add_option("--clip-lo", clip_lo);
    unc->add_option("--clip-hi", clip_hi);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "MSKD-ERR:config " << e.what() << '\n';
        return error_exit_status(ErrorCode::Config);
    }

    try {
        if (*gen) {
            const auto kv = load_config(config_path);
            const auto synth = data::SynthConfig::from_keys(kv);
            const auto corpus = data::generate_synthetic_dataset(synth);
            const fs::path root = out;
            data::write_dataset(root / "train", corpus.train);
            data::write_dataset(root / "test", corpus.test);
            const auto binaries = data::derive_binary_datasets(corpus.train, synth.disjoint_subsets);
            for (std::size_t k = 0; k < binaries.size(); ++k)
                data::write_dataset(organ_dir(root, static_cast<int>(k) + 1), binaries[k]);
            snapshot(&synth, nullptr, nullptr).save(root / "config.txt");
            std::cout << "wrote " << corpus.train.items.size() << " train / " << corpus.test.items.size()
                      << " test images and " << binaries.size() << " binary datasets to " << root.string() << '\n';
        } else if (*teach) {
            const auto kv = load_config(config_path);
            const auto tc = training::TrainConfig::from_keys(kv);
            const auto mc = training::model_config_from_keys(kv, 2);
            const auto dataset = data::load_dataset(organ_dir(data_dir, organ));
            const auto result = training::train_teacher(dataset, mc, tc, progress);
            training::write_run(out, result, snapshot(nullptr, &mc, &tc), tc,
                                {"Teacher organ " + std::to_string(organ),
                                 {"organ=" + std::to_string(organ), "data=" + data_dir}});
        } else if (*distill) {
            auto kv = load_config(config_path);
            auto tc = training::TrainConfig::from_keys(kv);
            if (mixed) tc.mixed_supervision = true;
            if (lambda1) tc.weights.lambda1 = *lambda1;
            if (lambda2) tc.weights.lambda2 = *lambda2;
            if (no_feature) tc.weights.lambda2 = 0.0;
            tc.validate();
            const auto teachers = load_teachers(teacher_paths);
            const int K = static_cast<int>(teachers.size());
            auto mc = training::model_config_from_keys(kv, K + 1);
            if (feature_level) mc.feature_tap_level = *feature_level;
            mc.validate();
            const auto union_set = load_union(data_dir, K, tc.mixed_supervision);
            const auto result = training::distill_student(teachers, union_set, mc, tc, progress);
            const std::string method = tc.weights.lambda2 == 0 ? kLabelLW : kLabelFull;
            training::write_run(out, result, snapshot(nullptr, &mc, &tc), tc,
                                {method,
                                 {"teachers=" + join(teacher_paths), "data=" + data_dir,
                                  "feature_tap=decoder level " + std::to_string(mc.feature_tap_level) +
                                      ", block output after its last normalisation, before the activation",
                                  "labels_read=" + std::string(tc.mixed_supervision ? "true" : "false")}});
        } else if (*hard) {
            const auto kv = load_config(config_path);
            const auto tc = training::TrainConfig::from_keys(kv);
            const auto teachers = load_teachers(teacher_paths);
            const int K = static_cast<int>(teachers.size());
            const auto mc = training::model_config_from_keys(kv, K + 1);
            const auto union_set = load_union(data_dir, K, false);
            data::Dataset pseudo;
            const auto result = baselines::hard_pseudo_label_distill(teachers, union_set, mc, tc, progress, &pseudo);
            data::write_dataset(fs::path(out) / "pseudo-labels", pseudo);
            training::write_run(out, result, snapshot(nullptr, &mc, &tc), tc,
                                {kLabelPseudo, {"teachers=" + join(teacher_paths), "data=" + data_dir}});
        } else if (*eval) {
            const auto test = data::load_dataset(resolve_dataset(data_dir, "test"));
            metrics::MetricsReport rep;
            rep.num_organs = test.num_organs;
            if (model_path) {
                const auto ck = model::load_checkpoint_expecting(*model_path, test.num_organs + 1);
                rep.rows.push_back(metrics::evaluate_model(label.value_or(method_of(*model_path)), ck.model, test));
            } else if (!merge_paths.empty()) {
                const auto teachers = load_teachers(merge_paths);
                rep.rows.push_back(
                    baselines::evaluate_merged_teachers(teachers, test, label.value_or(kLabelIndividual)));
            } else {
                throw ConfigError("eval needs --model or --merge-teachers");
            }
            io::write_text(out, metrics::format_csv(rep));
            std::cout << metrics::format_table(rep);
        } else if (*report) {
            std::vector<metrics::MetricsReport> parts;
            for (const auto& r : runs) {
                fs::path p = r;
                if (fs::is_directory(p)) p /= "report.csv";
                const auto bytes = io::read_file(p);
                parts.push_back(metrics::parse_csv(std::string(bytes.begin(), bytes.end()), p.string()));
            }
            const auto merged = metrics::merge_reports(parts);
            const auto table = metrics::format_table(merged);
            io::write_text(out, table);
            io::write_text(fs::path(out).string() + ".csv", metrics::format_csv(merged));
            std::cout << table;
        } else if (*unc) {
            const auto teacher = model::load_checkpoint_expecting(teacher_path, 2).model;
            const auto raw = io::read_tensor<float>(image_path);
            if (raw.rank() != 2) throw ShapeError("uncertainty: expected an H×W image, got " + shape_string(raw.shape()));
            const auto img = data::clip_normalize_intensity(raw, clip_lo, clip_hi);
            const auto result = teacher.forward(img.reshaped(Shape{1, 1, raw.dim(0), raw.dim(1)}));
            const auto logits = tensor_cast<double>(batch_item(result.logits, 0));
            const auto u = metrics::uncertainty_map(losses::softmax_channels(logits));
            metrics::write_png_gray(out, metrics::uncertainty_image(u, 2));
        }
    } catch (const Error& e) {
        std::cerr << "MSKD-ERR:" << error_code_name(e.code()) << ' ' << e.what() << '\n';
        return error_exit_status(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "MSKD-ERR:data " << e.what() << '\n';
        return error_exit_status(ErrorCode::Data);
    }
    return 0;
}
