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

#include "mskd/metrics.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace mskd::metrics {

namespace {

struct Point {
    double y, x;
};

std::vector<Point> foreground_points(const Mask& m, std::array<double, 2> spacing) {
    std::vector<Point> pts;
    for (std::size_t y = 0; y < m.dim(0); ++y)
        for (std::size_t x = 0; x < m.dim(1); ++x)
            if (m(y, x)) pts.push_back({static_cast<double>(y) * spacing[0], static_cast<double>(x) * spacing[1]});
    return pts;
}

// max_a min_b |a − b|², with early exit once a point cannot raise the max.
double directed_sq(const std::vector<Point>& from, const std::vector<Point>& to) {
    double worst = 0;
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dy = a.y - b.y, dx = a.x - b.x;
            best = std::min(best, dy * dy + dx * dx);
            if (best <= worst) break;
        }
        worst = std::max(worst, best);
    }
    return worst;
}

Mask class_mask(const LabelMap& labels, int k) {
    Mask m(labels.shape());
    for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == k ? 1 : 0;
    return m;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string organ_column(int k, int K) { return k == K ? "avg" : "organ" + std::to_string(k + 1); }

} // namespace

double dsc(const Mask& pred, const Mask& gt) {
    require_shape(pred.shape(), gt.shape(), "dsc");
    std::size_t inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        sp += p;
        sg += g;
    }
    if (sp + sg == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

std::optional<double> hausdorff(const Mask& pred, const Mask& gt, std::array<double, 2> spacing) {
    require_shape(pred.shape(), gt.shape(), "hausdorff");
    if (pred.rank() != 2) throw ShapeError("hausdorff: expected H×W masks");
    const auto a = foreground_points(pred, spacing), b = foreground_points(gt, spacing);
    if (a.empty() || b.empty()) return std::nullopt;
    return std::sqrt(std::max(directed_sq(a, b), directed_sq(b, a)));
}

ReportRow score_predictions(const std::string& method, std::span<const LabelMap> predictions,
                            std::span<const LabelMap> ground_truth, int num_organs, std::array<double, 2> spacing) {
    if (predictions.size() != ground_truth.size())
        throw InvalidInputError("score_predictions: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(ground_truth.size()) + " images");
    if (method.find(',') != std::string::npos) throw InvalidInputError("method names may not contain commas");
    ReportRow row;
    row.method = method;
    const auto n = static_cast<int>(predictions.size());
    for (int k = 1; k <= num_organs; ++k) {
        OrganScore s;
        s.n_images = n;
        double dsc_sum = 0, hd_sum = 0;
        int hd_count = 0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const Mask p = class_mask(predictions[i], k), g = class_mask(ground_truth[i], k);
            dsc_sum += dsc(p, g);
            if (auto hd = hausdorff(p, g, spacing)) {
                hd_sum += *hd;
                ++hd_count;
            } else {
                ++s.n_hd_excluded;
            }
        }
        s.dsc_percent = n ? 100.0 * dsc_sum / n : 0.0;
        if (hd_count) s.hd = hd_sum / hd_count;
        row.organs.push_back(s);
    }
    double dsc_avg = 0, hd_sum = 0;
    int hd_count = 0;
    for (const auto& s : row.organs) {
        dsc_avg += s.dsc_percent;
        if (s.hd) hd_sum += *s.hd, ++hd_count;
        row.average.n_hd_excluded += s.n_hd_excluded;
    }
    row.average.dsc_percent = num_organs ? dsc_avg / num_organs : 0.0;
    if (hd_count) row.average.hd = hd_sum / hd_count;
    row.average.n_images = n;
    return row;
}

std::vector<LabelMap> predict_labels(const model::SegModel& model, const data::Dataset& dataset, int batch_size) {
    std::vector<LabelMap> out;
    const std::size_t N = dataset.items.size();
    for (std::size_t start = 0; start < N; start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(N, start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
        const auto result = model.forward(data::image_batch(dataset, idx));
        const std::size_t C = result.logits.dim(1), H = result.logits.dim(2), W = result.logits.dim(3);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            LabelMap labels(Shape{H, W});
            const float* l = result.logits.data() + b * C * H * W;
            for (std::size_t i = 0; i < H * W; ++i) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < C; ++c)
                    if (l[c * H * W + i] > l[best * H * W + i]) best = c;
                labels[i] = static_cast<std::uint8_t>(best);
            }
            out.push_back(std::move(labels));
        }
    }
    return out;
}

ReportRow evaluate_model(const std::string& method, const model::SegModel& model, const data::Dataset& test_set) {
    if (model.config().out_channels != test_set.num_organs + 1)
        throw ConfigError("model emits " + std::to_string(model.config().out_channels) + " classes but the test set has " +
                          std::to_string(test_set.num_organs) + " organs (expected " +
                          std::to_string(test_set.num_organs + 1) + " classes)");
    std::vector<LabelMap> gt;
    for (const auto& item : test_set.items) {
        if (item.label.empty()) throw DataError("evaluate_model: test labels not loaded");
        gt.push_back(item.label);
    }
    const auto pred = predict_labels(model, test_set);
    return score_predictions(method, pred, gt, test_set.num_organs);
}

Tensor<double> uncertainty_map(const Tensor<double>& probs) {
    if (probs.rank() != 3 || probs.dim(0) < 2)
        throw ShapeError("uncertainty_map: expected C×H×W probabilities, got " + shape_string(probs.shape()));
    const std::size_t C = probs.dim(0), HW = probs.dim(1) * probs.dim(2);
    Tensor<double> out(Shape{probs.dim(1), probs.dim(2)});
    for (std::size_t i = 0; i < HW; ++i) {
        double peak = probs[i];
        for (std::size_t c = 1; c < C; ++c) peak = std::max(peak, probs[c * HW + i]);
        out[i] = 1.0 - peak;
    }
    return out;
}

Tensor<std::uint8_t> uncertainty_image(const Tensor<double>& uncertainty, int num_classes) {
    const double max_u = 1.0 - 1.0 / num_classes;
    Tensor<std::uint8_t> out(uncertainty.shape());
    for (std::size_t i = 0; i < uncertainty.size(); ++i) {
        const double t = std::clamp(uncertainty[i] / max_u, 0.0, 1.0);
        out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)));
    }
    return out;
}

void write_png_gray(const std::filesystem::path& path, const Tensor<std::uint8_t>& image) {
    if (image.rank() != 2) throw ShapeError("write_png_gray: expected H×W image");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw DataError("cannot open '" + path.string() + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw DataError("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, fp);
    const auto h = static_cast<png_uint_32>(image.dim(0)), w = static_cast<png_uint_32>(image.dim(1));
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(image.data() + static_cast<std::size_t>(y) * w));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

std::string format_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "method,organ,dsc_percent,hd,n_images,n_hd_excluded\n";
    for (const auto& row : report.rows)
        for (int k = 0; k <= report.num_organs; ++k) {
            const auto& s = k == report.num_organs ? row.average : row.organs[static_cast<std::size_t>(k)];
            out << row.method << ',' << organ_column(k, report.num_organs) << ',' << fixed(s.dsc_percent, 4) << ','
                << (s.hd ? fixed(*s.hd, 4) : "-") << ',' << s.n_images << ',' << s.n_hd_excluded << '\n';
        }
    return out.str();
}

std::string format_table(const MetricsReport& report) {
    const int K = report.num_organs;
    std::size_t method_w = 6;
    for (const auto& r : report.rows) method_w = std::max(method_w, r.method.size());
    auto pad = [](std::string s, std::size_t w, bool left) {
        if (s.size() >= w) return s;
        return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
    };
    std::vector<std::string> cols;
    for (int k = 1; k <= K; ++k) cols.push_back("Organ " + std::to_string(k));
    cols.push_back("Avg");
    const std::size_t cw = 9;

    std::ostringstream out;
    const std::string dsc_title = "DSC(%)", hd_title = "HD(" + report.hd_unit + ")";
    const std::size_t block = (cw + 1) * cols.size();
    out << pad("", method_w, true) << " |" << pad(dsc_title, block, false) << " |" << pad(hd_title, block, false)
        << '\n';
    out << pad("Method", method_w, true) << " |";
    for (const auto& c : cols) out << ' ' << pad(c, cw, false);
    out << " |";
    for (const auto& c : cols) out << ' ' << pad(c, cw, false);
    out << '\n' << std::string(method_w + 4 + 2 * block, '-') << '\n';
    for (const auto& row : report.rows) {
        out << pad(row.method, method_w, true) << " |";
        for (int k = 0; k <= K; ++k) {
            const auto& s = k == K ? row.average : row.organs[static_cast<std::size_t>(k)];
            out << ' ' << pad(fixed(s.dsc_percent, 2), cw, false);
        }
        out << " |";
        for (int k = 0; k <= K; ++k) {
            const auto& s = k == K ? row.average : row.organs[static_cast<std::size_t>(k)];
            out << ' ' << pad(s.hd ? fixed(*s.hd, 2) : "-", cw, false);
        }
        out << '\n';
    }
    return out.str();
}

MetricsReport parse_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "method,organ,dsc_percent,hd,n_images,n_hd_excluded")
        throw DataError("'" + origin + "' is not a metrics report (bad header)");
    MetricsReport report;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        if (f.size() != 6) throw DataError(origin + ":" + std::to_string(line_no) + ": expected 6 fields");
        OrganScore s;
        try {
            s.dsc_percent = std::stod(f[2]);
            if (f[3] != "-") s.hd = std::stod(f[3]);
            s.n_images = std::stoi(f[4]);
            s.n_hd_excluded = std::stoi(f[5]);
        } catch (const std::exception&) {
            throw DataError(origin + ":" + std::to_string(line_no) + ": malformed number");
        }
        if (report.rows.empty() || report.rows.back().method != f[0]) report.rows.push_back({f[0], {}, {}});
        auto& row = report.rows.back();
        if (f[1] == "avg") {
            row.average = s;
            if (report.num_organs == 0) report.num_organs = static_cast<int>(row.organs.size());
            else if (static_cast<int>(row.organs.size()) != report.num_organs)
                throw DataError(origin + ": rows disagree on organ count");
        } else {
            if (f[1] != "organ" + std::to_string(row.organs.size() + 1))
                throw DataError(origin + ":" + std::to_string(line_no) + ": unexpected organ column '" + f[1] + "'");
            row.organs.push_back(s);
        }
    }
    return report;
}

MetricsReport merge_reports(std::span<const MetricsReport> reports) {
    MetricsReport out;
    for (const auto& r : reports) {
        if (out.rows.empty()) out.num_organs = r.num_organs;
        else if (r.num_organs != out.num_organs)
            throw DataError("cannot merge reports over " + std::to_string(out.num_organs) + " and " +
                            std::to_string(r.num_organs) + " organs");
        out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    }
    return out;
}

} // namespace mskd::metrics
