#include "cyclegc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cyclegc {

namespace {

void require_same_dims(const ImageGrid& a, const ImageGrid& b, const char* who) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument(std::string(who) + ": dimension mismatch");
    if (a.h == 0 || a.w == 0) throw std::invalid_argument(std::string(who) + ": empty image");
}

std::vector<std::uint8_t> joint_mask(const ImageGrid& a, const ImageGrid& b, const char* who) {
    const std::size_t n = a.px.size();
    std::vector<std::uint8_t> m(n, 1);
    if (a.has_mask())
        for (std::size_t i = 0; i < n; ++i) m[i] &= a.mask[i] ? 1 : 0;
    if (b.has_mask())
        for (std::size_t i = 0; i < n; ++i) m[i] &= b.mask[i] ? 1 : 0;
    bool any = false;
    for (std::size_t i = 0; i < n && !any; ++i) any = m[i] != 0;
    if (!any) throw std::invalid_argument(std::string(who) + ": empty joint mask");
    return m;
}

// NCC over an explicit mask; exact-zero convention for constant images.
double masked_ncc(const std::vector<double>& a, const std::vector<double>& b,
                  const std::vector<std::uint8_t>& m) {
    double sa = 0.0, sb = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!m[i]) continue;
        sa += a[i];
        sb += b[i];
        ++n;
    }
    const double ma = sa / n, mb = sb / n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!m[i]) continue;
        const double xa = a[i] - ma, xb = b[i] - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / (std::sqrt(da) * std::sqrt(db));
}

}  // namespace

void gradient_x_raw(const double* src, int h, int w, double* out) {
    for (int r = 0; r < h; ++r) {
        const double* row = src + static_cast<std::size_t>(r) * w;
        double* orow = out + static_cast<std::size_t>(r) * w;
        if (w == 1) {
            orow[0] = 0.0;
            continue;
        }
        orow[0] = row[1] - row[0];
        for (int c = 1; c < w - 1; ++c) orow[c] = 0.5 * (row[c + 1] - row[c - 1]);
        orow[w - 1] = row[w - 1] - row[w - 2];
    }
}

void gradient_y_raw(const double* src, int h, int w, double* out) {
    if (h == 1) {
        std::fill(out, out + w, 0.0);
        return;
    }
    for (int c = 0; c < w; ++c) {
        out[c] = src[w + c] - src[c];
        out[static_cast<std::size_t>(h - 1) * w + c] =
            src[static_cast<std::size_t>(h - 1) * w + c] - src[static_cast<std::size_t>(h - 2) * w + c];
    }
    for (int r = 1; r < h - 1; ++r)
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(r) * w + c] =
                0.5 * (src[static_cast<std::size_t>(r + 1) * w + c] -
                       src[static_cast<std::size_t>(r - 1) * w + c]);
}

void gradient_x_adjoint(const double* gin, int h, int w, double* out_acc) {
    if (w == 1) return;
    for (int r = 0; r < h; ++r) {
        const double* grow = gin + static_cast<std::size_t>(r) * w;
        double* orow = out_acc + static_cast<std::size_t>(r) * w;
        orow[1] += grow[0];
        orow[0] -= grow[0];
        for (int c = 1; c < w - 1; ++c) {
            orow[c + 1] += 0.5 * grow[c];
            orow[c - 1] -= 0.5 * grow[c];
        }
        orow[w - 1] += grow[w - 1];
        orow[w - 2] -= grow[w - 1];
    }
}

void gradient_y_adjoint(const double* gin, int h, int w, double* out_acc) {
    if (h == 1) return;
    for (int c = 0; c < w; ++c) {
        out_acc[w + c] += gin[c];
        out_acc[c] -= gin[c];
        out_acc[static_cast<std::size_t>(h - 1) * w + c] += gin[static_cast<std::size_t>(h - 1) * w + c];
        out_acc[static_cast<std::size_t>(h - 2) * w + c] -= gin[static_cast<std::size_t>(h - 1) * w + c];
    }
    for (int r = 1; r < h - 1; ++r)
        for (int c = 0; c < w; ++c) {
            out_acc[static_cast<std::size_t>(r + 1) * w + c] += 0.5 * gin[static_cast<std::size_t>(r) * w + c];
            out_acc[static_cast<std::size_t>(r - 1) * w + c] -= 0.5 * gin[static_cast<std::size_t>(r) * w + c];
        }
}

void gradient_x(const ImageGrid& g, std::vector<double>& out) {
    out.assign(g.px.size(), 0.0);
    for (int r = 0; r < g.h; ++r) {
        for (int c = 0; c < g.w; ++c) {
            if (!g.valid_at(r, c)) continue;
            const bool left = c > 0 && g.valid_at(r, c - 1);
            const bool right = c < g.w - 1 && g.valid_at(r, c + 1);
            double v = 0.0;
            if (left && right)
                v = 0.5 * (g.at(r, c + 1) - g.at(r, c - 1));
            else if (right)
                v = g.at(r, c + 1) - g.at(r, c);
            else if (left)
                v = g.at(r, c) - g.at(r, c - 1);
            out[static_cast<std::size_t>(r) * g.w + c] = v;
        }
    }
}

void gradient_y(const ImageGrid& g, std::vector<double>& out) {
    out.assign(g.px.size(), 0.0);
    for (int r = 0; r < g.h; ++r) {
        for (int c = 0; c < g.w; ++c) {
            if (!g.valid_at(r, c)) continue;
            const bool up = r > 0 && g.valid_at(r - 1, c);
            const bool down = r < g.h - 1 && g.valid_at(r + 1, c);
            double v = 0.0;
            if (up && down)
                v = 0.5 * (g.at(r + 1, c) - g.at(r - 1, c));
            else if (down)
                v = g.at(r + 1, c) - g.at(r, c);
            else if (up)
                v = g.at(r, c) - g.at(r - 1, c);
            out[static_cast<std::size_t>(r) * g.w + c] = v;
        }
    }
}

double ncc(const ImageGrid& a, const ImageGrid& b) {
    require_same_dims(a, b, "ncc");
    const auto m = joint_mask(a, b, "ncc");
    return masked_ncc(a.px, b.px, m);
}

double gradient_correlation(const ImageGrid& a, const ImageGrid& b) {
    require_same_dims(a, b, "gradient_correlation");
    if (a.h < 2 || a.w < 2)
        throw std::invalid_argument("gradient_correlation: grids must be at least 2x2");
    const auto m = joint_mask(a, b, "gradient_correlation");

    // Gradients are evaluated on each image under the joint mask so both
    // stencils see the same domain.
    ImageGrid am = a, bm = b;
    am.mask.assign(m.begin(), m.end());
    bm.mask.assign(m.begin(), m.end());
    std::vector<double> gax, gay, gbx, gby;
    gradient_x(am, gax);
    gradient_y(am, gay);
    gradient_x(bm, gbx);
    gradient_y(bm, gby);
    return 0.5 * (masked_ncc(gax, gbx, m) + masked_ncc(gay, gby, m));
}

double mae(const ImageGrid& a, const ImageGrid& b) {
    require_same_dims(a, b, "mae");
    const auto m = joint_mask(a, b, "mae");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        if (!m[i]) continue;
        s += std::abs(a.px[i] - b.px[i]);
        ++n;
    }
    return s / n;
}

double psnr(const ImageGrid& a, const ImageGrid& b) {
    require_same_dims(a, b, "psnr");
    const auto m = joint_mask(a, b, "psnr");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        if (!m[i]) continue;
        const double d = a.px[i] - b.px[i];
        s += d * d;
        ++n;
    }
    const double mse = s / n;
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(255.0 / std::sqrt(mse));
}

double mutual_information(const ImageGrid& a, const ImageGrid& b, int bins) {
    require_same_dims(a, b, "mutual_information");
    if (bins < 2) throw std::invalid_argument("mutual_information: bins must be >= 2");
    const auto m = joint_mask(a, b, "mutual_information");

    auto bin_of = [bins](double v) {
        int k = static_cast<int>(std::floor(v / 255.0 * bins));
        return std::min(bins - 1, std::max(0, k));
    };
    std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
    std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        if (!m[i]) continue;
        const int ka = bin_of(a.px[i]);
        const int kb = bin_of(b.px[i]);
        joint[static_cast<std::size_t>(ka) * bins + kb] += 1.0;
        ++n;
    }
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double p = joint[static_cast<std::size_t>(i) * bins + j] / n;
            joint[static_cast<std::size_t>(i) * bins + j] = p;
            pa[i] += p;
            pb[j] += p;
        }
    double mi = 0.0;
    for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
            const double p = joint[static_cast<std::size_t>(i) * bins + j];
            if (p > 0.0) mi += p * std::log(p / (pa[i] * pb[j]));
        }
    return mi;
}

double dice(const LabelGrid& p, const LabelGrid& g, int class_id) {
    if (p.h != g.h || p.w != g.w) throw std::invalid_argument("dice: dimension mismatch");
    std::size_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < p.classes.size(); ++i) {
        const bool in_p = p.classes[i] == class_id;
        const bool in_g = g.classes[i] == class_id;
        np += in_p;
        ng += in_g;
        inter += in_p && in_g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void MetricReport::add(const std::string& item_id, const std::string& metric, double value) {
    per_item.push_back({item_id, metric, value});
}

std::vector<double> MetricReport::values_for(const std::string& metric) const {
    std::vector<double> v;
    for (const auto& it : per_item)
        if (it.metric == metric) v.push_back(it.value);
    return v;
}

std::vector<MetricAggregate> MetricReport::aggregates() const {
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> by_metric;
    for (const auto& it : per_item) {
        if (!by_metric.count(it.metric)) order.push_back(it.metric);
        by_metric[it.metric].push_back(it.value);
    }
    std::vector<MetricAggregate> out;
    for (const auto& name : order) {
        const auto& v = by_metric[name];
        out.push_back({name, mean_of(v), sample_sd(v), static_cast<int>(v.size())});
    }
    return out;
}

namespace {
std::string fmt_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}
}  // namespace

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << "item_id,metric,value\n";
    for (const auto& it : per_item)
        os << it.item_id << "," << it.metric << "," << fmt_value(it.value) << "\n";
    return os.str();
}

std::string MetricReport::aggregate_json() const {
    nlohmann::json j;
    j["config"] = {{"mi_bins", config.mi_bins},
                   {"gradient_operator", config.gradient_operator},
                   {"mask_policy", config.mask_policy},
                   {"mi_units", "nats"}};
    nlohmann::json aggs = nlohmann::json::array();
    for (const auto& a : aggregates()) {
        nlohmann::json e;
        e["metric"] = a.metric;
        e["mean"] = std::isinf(a.mean) ? nlohmann::json("inf") : nlohmann::json(a.mean);
        e["sd"] = a.sd;
        e["n"] = a.n;
        aggs.push_back(e);
    }
    j["aggregate"] = aggs;
    return j.dump(2);
}

void MetricReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    out << to_csv();
}

void MetricReport::write_aggregate_json(const std::string& path) const {
    std::ofstream out(path);
    out << aggregate_json() << "\n";
}

}  // namespace cyclegc
