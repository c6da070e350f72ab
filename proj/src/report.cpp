#include "sepnet/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sepnet {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 130, kTop = 40, kBottom = 60;
constexpr double kPlotW = kWidth - kLeft - kRight, kPlotH = kHeight - kTop - kBottom;
constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
    std::size_t n = 0;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) throw std::invalid_argument("chart values must be finite");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (n == 0) throw std::invalid_argument("chart needs at least one point");
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo = lo >= 0.0 ? std::max(0.0, lo - pad) : lo - pad;
    hi += pad;
    auto px = [&](std::size_t i) { return n == 1 ? kPlotW / 2 : kPlotW * static_cast<double>(i) / (n - 1); };
    auto py = [&](double v) { return kPlotH * (v - lo) / (hi - lo); };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
        "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
        "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{3}</text>\n",
        kWidth, kHeight, kLeft + kPlotW / 2, escape(title));

    // Axis labels and ticks, in screen coordinates.
    svg += fmt::format(
        "<text class=\"x-label\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">epoch</text>\n",
        kLeft + kPlotW / 2, kHeight - 15);
    svg += fmt::format(
        "<text class=\"y-label\" x=\"18\" y=\"{0}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        "transform=\"rotate(-90 18 {0})\">{1}</text>\n",
        kTop + kPlotH / 2, escape(y_label));
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        svg += fmt::format(
            "<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{:.3g}</text>\n",
            kLeft - 6, kTop + kPlotH - py(v) + 4, v);
    }
    const std::size_t step = std::max<std::size_t>(1, (n + 9) / 10);
    for (std::size_t i = 0; i < n; i += step) {
        svg += fmt::format(
            "<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            kLeft + px(i), kTop + kPlotH + 18, i + 1);
    }

    svg += fmt::format("<g class=\"plot\" transform=\"translate({} {}) scale(1 -1)\">\n", kLeft, kTop + kPlotH);
    svg += fmt::format("<line x1=\"0\" y1=\"0\" x2=\"{}\" y2=\"0\" stroke=\"black\"/>\n", kPlotW);
    svg += fmt::format("<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"{}\" stroke=\"black\"/>\n", kPlotH);
    for (std::size_t k = 0; k < series.size(); ++k) {
        std::string points;
        for (std::size_t i = 0; i < series[k].values.size(); ++i) {
            if (i) points += ' ';
            points += fmt::format("{:.2f},{:.2f}", px(i), py(series[k].values[i]));
        }
        svg += fmt::format(
            "<polyline data-series=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            escape(series[k].name), kColors[k % std::size(kColors)], points);
    }
    svg += "</g>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const double y = kTop + 10 + 20.0 * k;
        svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                           kLeft + kPlotW + 15, y, kLeft + kPlotW + 35, kColors[k % std::size(kColors)]);
        svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                           kLeft + kPlotW + 40, y + 4, escape(series[k].name));
    }
    svg += "</svg>\n";
    return svg;
}

std::string loss_chart(const std::vector<EpochRecord>& history) {
    Series train{"train", {}}, val{"validation", {}};
    for (const auto& r : history) {
        train.values.push_back(r.train_loss);
        val.values.push_back(r.val_loss);
    }
    return line_chart_svg("Model loss", "loss", {train, val});
}

std::string accuracy_chart(const std::vector<EpochRecord>& history) {
    Series train{"train", {}}, val{"validation", {}};
    for (const auto& r : history) {
        train.values.push_back(r.train_accuracy);
        val.values.push_back(r.val_accuracy);
    }
    return line_chart_svg("Model accuracy", "accuracy", {train, val});
}

}  // namespace sepnet
