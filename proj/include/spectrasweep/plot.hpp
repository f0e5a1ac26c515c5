#pragma once

// Per-pixel spectral signature comparison as CSV and a standalone SVG line chart.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

struct SignatureSeries {
    std::vector<double> wavelength_nm;
    std::vector<double> truth;
    std::vector<double> prediction;
};

inline SignatureSeries signature_at(const SpectralCube& pred, const SpectralCube& truth, int x, int y) {
    if (!pred.data().same_shape(truth.data())) throw ShapeError("plot_signature: cube dimensions differ");
    if (x < 0 || y < 0 || x >= truth.width() || y >= truth.height())
        throw RangeError("plot_signature: pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                         ") outside " + std::to_string(truth.width()) + "x" + std::to_string(truth.height()));
    SignatureSeries s;
    for (int b = 0; b < truth.bands_count(); ++b) {
        s.wavelength_nm.push_back(truth.bands()[b]);
        s.truth.push_back(truth(b, y, x));
        s.prediction.push_back(pred(b, y, x));
    }
    return s;
}

inline std::string signature_csv(const SignatureSeries& s) {
    std::string out = "wavelength_nm,truth,prediction\n";
    char line[128];
    for (std::size_t i = 0; i < s.truth.size(); ++i) {
        std::snprintf(line, sizeof line, "%.6g,%.17g,%.17g\n", s.wavelength_nm[i], s.truth[i], s.prediction[i]);
        out += line;
    }
    return out;
}

inline std::string signature_svg(const SignatureSeries& s, int x, int y) {
    const double W = 640, H = 400, ml = 60, mr = 20, mt = 30, mb = 50;
    double lo = s.wavelength_nm.front(), hi = s.wavelength_nm.back();
    if (hi <= lo) hi = lo + 1.0;
    double vmax = 0.0;
    for (double v : s.truth) vmax = std::max(vmax, v);
    for (double v : s.prediction) vmax = std::max(vmax, v);
    if (!(vmax > 0.0)) vmax = 1.0;
    auto px = [&](double nm) { return ml + (nm - lo) / (hi - lo) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - v / vmax * (H - mt - mb); };
    auto polyline = [&](const std::vector<double>& v, const char* colour, const char* dash) {
        std::string pts;
        char buf[64];
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(s.wavelength_nm[i]), py(v[i]));
            pts += buf;
        }
        return std::string("  <polyline fill=\"none\" stroke=\"") + colour + "\" stroke-width=\"2\"" + dash +
               " points=\"" + pts + "\"/>\n";
    };
    char buf[512];
    std::string svg;
    std::snprintf(buf, sizeof buf,
                  "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n"
                  "  <rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n"
                  "  <text x=\"%.0f\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">Spectral signature at "
                  "pixel (%d, %d)</text>\n",
                  W, H, W, H, ml, x, y);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "  <line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n"
                  "  <line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n",
                  ml, H - mb, W - mr, H - mb, ml, mt, ml, H - mb);
    svg += buf;
    for (int t = 0; t <= 4; ++t) {
        double nm = lo + (hi - lo) * t / 4.0, v = vmax * t / 4.0;
        std::snprintf(buf, sizeof buf,
                      "  <text x=\"%.2f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%.0f</text>\n"
                      "  <text x=\"%.0f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%.3g</text>\n",
                      px(nm), H - mb + 16, nm, ml - 6, py(v) + 4, v);
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "  <text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\" "
                  "text-anchor=\"middle\">wavelength (nm)</text>\n",
                  ml + (W - ml - mr) / 2, H - 12);
    svg += buf;
    svg += polyline(s.truth, "#1f77b4", "");
    svg += polyline(s.prediction, "#d62728", " stroke-dasharray=\"6 4\"");
    std::snprintf(buf, sizeof buf,
                  "  <text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#1f77b4\">truth</text>\n"
                  "  <text x=\"%.0f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"12\" "
                  "fill=\"#d62728\">prediction</text>\n",
                  W - mr - 90, mt + 10, W - mr - 90, mt + 26);
    svg += buf;
    svg += "</svg>\n";
    return svg;
}

struct SignaturePlot {
    std::string csv;
    std::string svg;
};

inline SignaturePlot plot_signature(const SpectralCube& pred, const SpectralCube& truth, int x, int y) {
    auto s = signature_at(pred, truth, x, y);
    return {signature_csv(s), signature_svg(s, x, y)};
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(path, "cannot open for writing");
    f << text;
    if (!f) throw IoError(path, "write failed");
}

}  // namespace spectrasweep
