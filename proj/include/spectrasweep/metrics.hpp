#pragma once

// Reconstruction quality metrics and the Best / Worst / Mean report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "spectrasweep/error.hpp"
#include "spectrasweep/losses.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

/// PSNR in dB. Identical inputs give +infinity (see is_perfect_psnr).
inline double psnr(const Volume& y, const Volume& yhat, double max_value = 1.0) {
    require_same_shape(y, yhat, "psnr");
    if (!(max_value > 0.0)) throw DomainError("psnr: max_value must be positive");
    double se = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = y.data()[i] - yhat.data()[i];
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    double mse = se / static_cast<double>(y.size());
    return 10.0 * std::log10(max_value * max_value / mse);
}

inline double psnr(const SpectralCube& y, const SpectralCube& yhat, double max_value = 1.0) {
    return psnr(y.data(), yhat.data(), max_value);
}

inline bool is_perfect_psnr(double db) noexcept { return std::isinf(db) && db > 0; }

struct PairMetrics {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double l1 = 0.0;
    /// SSIM after projecting both cubes to RGB; empty when the grid has no visible bands.
    std::optional<double> ssim_rgb;
};

struct Aggregate {
    double best = 0.0;
    double worst = 0.0;
    double mean = 0.0;
};

struct MetricReport {
    std::vector<PairMetrics> pairs;
    Aggregate psnr_db;
    Aggregate ssim;
    Aggregate l1;
    std::optional<Aggregate> ssim_rgb;

    static constexpr const char* kColumns[3] = {"Best", "Worst", "Mean"};
};

inline PairMetrics evaluate_pair(const SpectralCube& pred, const SpectralCube& truth, const SsimParams& params = {}) {
    if (!pred.data().same_shape(truth.data())) throw ShapeError("evaluate: prediction and truth dimensions differ");
    PairMetrics m;
    m.psnr_db = psnr(truth, pred);
    m.ssim = ssim(truth.data(), pred.data(), params);
    m.l1 = l1_loss(truth, pred);
    try {
        auto proj = RGBProjection::cie_default(truth.bands());
        m.ssim_rgb = ssim(rgb_project(truth, proj), rgb_project(pred, proj), params);
    } catch (const InvariantError&) {
    }
    return m;
}

namespace detail {

template <class Get>
Aggregate aggregate(const std::vector<PairMetrics>& pairs, bool higher_is_better, Get get) {
    Aggregate a;
    a.best = a.worst = get(pairs.front());
    double sum = 0.0;
    for (const auto& p : pairs) {
        double v = get(p);
        a.best = higher_is_better ? std::max(a.best, v) : std::min(a.best, v);
        a.worst = higher_is_better ? std::min(a.worst, v) : std::max(a.worst, v);
        sum += v;
    }
    a.mean = sum / static_cast<double>(pairs.size());
    return a;
}

}  // namespace detail

inline MetricReport evaluate(const std::vector<SpectralCube>& pred, const std::vector<SpectralCube>& truth,
                             const SsimParams& params = {}) {
    if (pred.empty()) throw InsufficientDataError("evaluate: empty test set");
    if (pred.size() != truth.size()) throw ShapeError("evaluate: prediction and truth counts differ");
    MetricReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) r.pairs.push_back(evaluate_pair(pred[i], truth[i], params));
    r.psnr_db = detail::aggregate(r.pairs, true, [](const PairMetrics& p) { return p.psnr_db; });
    r.ssim = detail::aggregate(r.pairs, true, [](const PairMetrics& p) { return p.ssim; });
    r.l1 = detail::aggregate(r.pairs, false, [](const PairMetrics& p) { return p.l1; });
    bool all_rgb = std::all_of(r.pairs.begin(), r.pairs.end(), [](const PairMetrics& p) { return p.ssim_rgb.has_value(); });
    if (all_rgb) r.ssim_rgb = detail::aggregate(r.pairs, true, [](const PairMetrics& p) { return *p.ssim_rgb; });
    return r;
}

inline MetricReport evaluate(const SpectralCube& pred, const SpectralCube& truth, const SsimParams& params = {}) {
    return evaluate(std::vector<SpectralCube>{pred}, std::vector<SpectralCube>{truth}, params);
}

namespace detail {

inline nlohmann::ordered_json metric_value(double v) {
    if (is_perfect_psnr(v)) return "perfect";
    return v;
}

inline nlohmann::ordered_json aggregate_json(const Aggregate& a) {
    nlohmann::ordered_json j;
    j["Best"] = metric_value(a.best);
    j["Worst"] = metric_value(a.worst);
    j["Mean"] = metric_value(a.mean);
    return j;
}

inline std::string format_cell(double v) {
    if (is_perfect_psnr(v)) return "perfect";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : r.pairs) {
        nlohmann::ordered_json e;
        e["psnr_db"] = detail::metric_value(p.psnr_db);
        e["ssim"] = p.ssim;
        e["l1"] = p.l1;
        if (p.ssim_rgb) e["ssim_rgb"] = *p.ssim_rgb;
        j["pairs"].push_back(e);
    }
    nlohmann::ordered_json agg;
    agg["PSNR (dB)"] = detail::aggregate_json(r.psnr_db);
    agg["SSIM"] = detail::aggregate_json(r.ssim);
    agg["L1"] = detail::aggregate_json(r.l1);
    if (r.ssim_rgb) agg["SSIM (RGB)"] = detail::aggregate_json(*r.ssim_rgb);
    j["aggregate"] = agg;
    return j;
}

/// Fixed-width text table: one row per metric, columns Best / Worst / Mean.
inline std::string report_table(const MetricReport& r) {
    std::vector<std::pair<std::string, const Aggregate*>> rows = {
        {"PSNR (dB)", &r.psnr_db}, {"SSIM", &r.ssim}, {"L1", &r.l1}};
    if (r.ssim_rgb) rows.emplace_back("SSIM (RGB)", &*r.ssim_rgb);
    char line[128];
    std::string out;
    std::snprintf(line, sizeof line, "%-10s | %9s | %9s | %9s\n", "", "Best", "Worst", "Mean");
    out += line;
    out += std::string(10, '-') + "-+-" + std::string(9, '-') + "-+-" + std::string(9, '-') + "-+-" +
           std::string(9, '-') + "\n";
    for (const auto& [name, a] : rows) {
        std::snprintf(line, sizeof line, "%-10s | %9s | %9s | %9s\n", name.c_str(), detail::format_cell(a->best).c_str(),
                      detail::format_cell(a->worst).c_str(), detail::format_cell(a->mean).c_str());
        out += line;
    }
    return out;
}

}  // namespace spectrasweep
