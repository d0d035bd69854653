#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "cyclegc/experiment.hpp"

namespace fs = std::filesystem;

namespace cyclegc {

namespace {

struct BoxStats {
    double lo_whisker, q1, median, q3, hi_whisker;
    std::vector<double> outliers;
};

double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted[0];
    const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size()) return sorted.back();
    return sorted[i] * (1.0 - frac) + sorted[i + 1] * frac;
}

BoxStats box_stats(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    BoxStats b{};
    b.q1 = quantile(v, 0.25);
    b.median = quantile(v, 0.5);
    b.q3 = quantile(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr;
    const double hi_fence = b.q3 + 1.5 * iqr;
    b.lo_whisker = b.q3;
    b.hi_whisker = b.q1;
    bool any = false;
    for (double x : v) {
        if (x >= lo_fence && x <= hi_fence) {
            if (!any) {
                b.lo_whisker = b.hi_whisker = x;
                any = true;
            } else {
                b.lo_whisker = std::min(b.lo_whisker, x);
                b.hi_whisker = std::max(b.hi_whisker, x);
            }
        } else {
            b.outliers.push_back(x);
        }
    }
    return b;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

/// One panel of grouped box-and-whisker marks. Returns false when every
/// group is empty (nothing drawn).
bool write_boxplot_svg(const std::string& path, const std::string& title,
                       const std::string& ylabel,
                       const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
    std::vector<std::pair<std::string, std::vector<double>>> filled;
    for (const auto& g : groups)
        if (!g.second.empty()) filled.push_back(g);
    if (filled.empty()) return false;

    double lo = filled[0].second[0], hi = lo;
    for (const auto& [_, vals] : filled)
        for (double v : vals) {
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;

    const int n = static_cast<int>(filled.size());
    const double plot_w = 90.0 * n;
    const double width = plot_w + 110.0, height = 340.0;
    const double top = 48.0, bottom = 60.0, left = 70.0;
    const double plot_h = height - top - bottom;
    auto ypix = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << " " << height << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='15' "
           "font-family='sans-serif'>"
        << title << "</text>\n";
    svg << "<text x='16' y='" << top + plot_h / 2
        << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 "
           "16 "
        << top + plot_h / 2 << ")'>" << ylabel << "</text>\n";
    // axes
    svg << "<line x1='" << left << "' y1='" << top << "' x2='" << left << "' y2='" << top + plot_h
        << "' stroke='black'/>\n";
    svg << "<line x1='" << left << "' y1='" << top + plot_h << "' x2='" << left + plot_w
        << "' y2='" << top + plot_h << "' stroke='black'/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        svg << "<line x1='" << left - 4 << "' y1='" << ypix(v) << "' x2='" << left << "' y2='"
            << ypix(v) << "' stroke='black'/>\n";
        svg << "<text x='" << left - 8 << "' y='" << ypix(v) + 4
            << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << fmt_tick(v)
            << "</text>\n";
    }
    for (int i = 0; i < n; ++i) {
        const auto& [label, vals] = filled[static_cast<std::size_t>(i)];
        const BoxStats b = box_stats(vals);
        const double cx = left + 90.0 * i + 45.0;
        const double bw = 42.0;
        svg << "<line x1='" << cx << "' y1='" << ypix(b.lo_whisker) << "' x2='" << cx << "' y2='"
            << ypix(b.q1) << "' stroke='black'/>\n";
        svg << "<line x1='" << cx << "' y1='" << ypix(b.q3) << "' x2='" << cx << "' y2='"
            << ypix(b.hi_whisker) << "' stroke='black'/>\n";
        svg << "<line x1='" << cx - 12 << "' y1='" << ypix(b.lo_whisker) << "' x2='" << cx + 12
            << "' y2='" << ypix(b.lo_whisker) << "' stroke='black'/>\n";
        svg << "<line x1='" << cx - 12 << "' y1='" << ypix(b.hi_whisker) << "' x2='" << cx + 12
            << "' y2='" << ypix(b.hi_whisker) << "' stroke='black'/>\n";
        svg << "<rect x='" << cx - bw / 2 << "' y='" << ypix(b.q3) << "' width='" << bw
            << "' height='" << std::max(1.0, ypix(b.q1) - ypix(b.q3))
            << "' fill='#9ecae1' stroke='black'/>\n";
        svg << "<line x1='" << cx - bw / 2 << "' y1='" << ypix(b.median) << "' x2='" << cx + bw / 2
            << "' y2='" << ypix(b.median) << "' stroke='black' stroke-width='2'/>\n";
        for (double o : b.outliers)
            svg << "<circle cx='" << cx << "' cy='" << ypix(o)
                << "' r='2.5' fill='none' stroke='black'/>\n";
        svg << "<text x='" << cx << "' y='" << top + plot_h + 18
            << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << label
            << "</text>\n";
        svg << "<text x='" << cx << "' y='" << top + plot_h + 32
            << "' text-anchor='middle' font-size='9' font-family='sans-serif'>n=" << vals.size()
            << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw FormatError("cannot write figure: " + path);
    out << svg.str();
    return true;
}

namespace {

struct PerItemRow {
    std::string metric;
    int train_size;
    int use_gc;
    std::string seed;
    double value;
};

std::vector<PerItemRow> read_per_item(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing per_item.csv (run the experiment first): " + path);
    std::vector<PerItemRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string metric, ts, gc, seed, item, value;
        std::getline(ss, metric, ',');
        std::getline(ss, ts, ',');
        std::getline(ss, gc, ',');
        std::getline(ss, seed, ',');
        std::getline(ss, item, ',');
        std::getline(ss, value, ',');
        if (value == "inf") continue;  // unplottable sentinel
        try {
            rows.push_back({metric, std::stoi(ts), std::stoi(gc), seed, std::stod(value)});
        } catch (const std::exception&) {
            throw FormatError("malformed per_item.csv row: " + line);
        }
    }
    return rows;
}

}  // namespace

std::vector<std::string> report_figures(const std::string& experiment_dir,
                                        const std::string& out_dir) {
    const auto rows = read_per_item((fs::path(experiment_dir) / "per_item.csv").string());
    fs::create_directories(out_dir);

    std::set<std::string> metrics;
    for (const auto& r : rows) metrics.insert(r.metric);

    std::vector<std::string> written;
    for (const auto& metric : metrics) {
        // group by arm, ordered small->large and nogc->gc within size
        std::map<std::pair<int, int>, std::vector<double>> by_arm;
        for (const auto& r : rows)
            if (r.metric == metric) by_arm[{r.train_size, r.use_gc}].push_back(r.value);
        std::vector<std::pair<std::string, std::vector<double>>> groups;
        for (const auto& [key, vals] : by_arm) {
            std::ostringstream label;
            label << "n=" << key.first << (key.second ? " /w GC" : " w/o GC");
            groups.emplace_back(label.str(), vals);
        }
        const std::string fname = metric + ".svg";
        const std::string path = (fs::path(out_dir) / fname).string();
        if (write_boxplot_svg(path, metric, metric, groups)) {
            written.push_back(path);
        } else {
            std::cerr << "[report] metric '" << metric << "' has no values; figure omitted\n";
        }
    }
    return written;
}

}  // namespace cyclegc
