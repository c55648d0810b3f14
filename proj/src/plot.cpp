#include "rmlab/plot.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace rmlab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

int column(const std::vector<std::string>& header, const std::string& name, const fs::path& path) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(path.string() + ": missing column '" + name + "'");
    return static_cast<int>(it - header.begin());
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
        if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
        const double m = 0.05 * (hi - lo);
        lo -= m;
        hi += m;
    }
};

void write_file(const fs::path& out, const std::string& svg) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw FormatError("cannot write " + out.string());
    f << svg;
}

}  // namespace

CurveData read_curve_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path.string() + ": empty curve file");
    const auto header = split_csv(line);
    const int kl = column(header, "kl_nats", path);
    const int proxy = column(header, "proxy_mean", path);
    const int gold = column(header, "gold_mean", path);
    const int comb = column(header, "combiner", path);
    CurveData c;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != header.size()) throw FormatError(path.string() + ": ragged row");
        c.kl.push_back(parse_double(fields[static_cast<std::size_t>(kl)]));
        c.proxy.push_back(parse_double(fields[static_cast<std::size_t>(proxy)]));
        c.gold.push_back(parse_double(fields[static_cast<std::size_t>(gold)]));
        c.label = fields[static_cast<std::size_t>(comb)];
    }
    if (c.kl.empty()) throw FormatError(path.string() + ": no rows");
    return c;
}

std::vector<CurveBand> aggregate_curves(std::span<const CurveData> curves, double kl_cap) {
    if (curves.empty()) throw ConfigError("plot: no curves given");
    std::vector<std::string> order;
    std::map<std::string, std::vector<const CurveData*>> groups;
    for (const auto& c : curves) {
        if (!groups.count(c.label)) order.push_back(c.label);
        groups[c.label].push_back(&c);
    }
    std::vector<CurveBand> out;
    for (const auto& label : order) {
        const auto& members = groups[label];
        const std::size_t n = members.front()->kl.size();
        for (const auto* m : members)
            if (m->kl.size() != n || m->gold.size() != n || m->proxy.size() != n)
                throw ShapeError("plot: curves labeled '" + label + "' differ in length");
        CurveBand b;
        b.label = label;
        b.runs = static_cast<int>(members.size());
        const double r = static_cast<double>(members.size());
        for (std::size_t i = 0; i < n; ++i) {
            double kl = 0.0, g = 0.0, p = 0.0;
            for (const auto* m : members) {
                kl += m->kl[i];
                g += m->gold[i];
                p += m->proxy[i];
            }
            kl /= r;
            g /= r;
            p /= r;
            if (kl > kl_cap) continue;
            double gv = 0.0, pv = 0.0;
            for (const auto* m : members) {
                gv += (m->gold[i] - g) * (m->gold[i] - g);
                pv += (m->proxy[i] - p) * (m->proxy[i] - p);
            }
            b.kl.push_back(kl);
            b.gold_mean.push_back(g);
            b.proxy_mean.push_back(p);
            b.gold_sd.push_back(members.size() > 1 ? std::sqrt(gv / (r - 1.0)) : 0.0);
            b.proxy_sd.push_back(members.size() > 1 ? std::sqrt(pv / (r - 1.0)) : 0.0);
        }
        out.push_back(std::move(b));
    }
    return out;
}

std::string render_curves_svg(std::span<const CurveBand> bands, const CurvePlotOptions& opts) {
    constexpr double W = 760, H = 460, L = 70, R = 150, T = 40, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    double xmax = 0.0;
    Range gold, proxy;
    for (const auto& b : bands)
        for (std::size_t i = 0; i < b.kl.size(); ++i) {
            xmax = std::max(xmax, std::sqrt(std::max(0.0, b.kl[i])));
            gold.add(b.gold_mean[i] - b.gold_sd[i]);
            gold.add(b.gold_mean[i] + b.gold_sd[i]);
            proxy.add(b.proxy_mean[i] - b.proxy_sd[i]);
            proxy.add(b.proxy_mean[i] + b.proxy_sd[i]);
        }
    if (xmax <= 0.0) xmax = 1.0;
    gold.pad();
    proxy.pad();
    auto X = [&](double kl) { return L + pw * std::sqrt(std::max(0.0, kl)) / xmax; };
    auto YG = [&](double v) { return T + ph * (1.0 - (v - gold.lo) / (gold.hi - gold.lo)); };
    auto YP = [&](double v) { return T + ph * (1.0 - (v - proxy.lo) / (proxy.hi - proxy.lo)); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    if (!opts.title.empty())
        s << "<text x=\"" << num(L + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
          << escape(opts.title) << "</text>\n";
    s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    // x ticks at perfect squares so labels stay in nats
    const int tmax = static_cast<int>(std::floor(xmax));
    const int step = std::max(1, tmax / 6);
    for (int t = 0; t <= tmax; t += step) {
        const double kl = static_cast<double>(t * t);
        s << "<line x1=\"" << num(X(kl)) << "\" y1=\"" << num(T + ph) << "\" x2=\"" << num(X(kl)) << "\" y2=\""
          << num(T + ph + 5) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << num(X(kl)) << "\" y=\"" << num(T + ph + 18) << "\" text-anchor=\"middle\">" << t * t
          << "</text>\n";
    }
    s << "<text x=\"" << num(L + pw / 2) << "\" y=\"" << num(H - 15)
      << "\" text-anchor=\"middle\">KL divergence (nats, square-root scale)</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double gv = gold.lo + (gold.hi - gold.lo) * i / 4.0;
        const double pv = proxy.lo + (proxy.hi - proxy.lo) * i / 4.0;
        s << "<text x=\"" << num(L - 6) << "\" y=\"" << num(YG(gv) + 4) << "\" text-anchor=\"end\">" << tick(gv)
          << "</text>\n";
        s << "<text x=\"" << num(L + pw + 6) << "\" y=\"" << num(YP(pv) + 4) << "\">" << tick(pv) << "</text>\n";
    }
    s << "<text transform=\"translate(18," << num(T + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">gold score</text>\n";
    s << "<text transform=\"translate(" << num(L + pw + 55) << ',' << num(T + ph / 2)
      << ") rotate(90)\" text-anchor=\"middle\">proxy score (dashed)</text>\n";

    for (std::size_t c = 0; c < bands.size(); ++c) {
        const auto& b = bands[c];
        const char* color = kPalette[c % std::size(kPalette)];
        if (b.kl.empty()) continue;
        if (b.runs > 1) {
            s << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < b.kl.size(); ++i)
                s << num(X(b.kl[i])) << ',' << num(YG(b.gold_mean[i] + b.gold_sd[i])) << ' ';
            for (std::size_t i = b.kl.size(); i-- > 0;)
                s << num(X(b.kl[i])) << ',' << num(YG(b.gold_mean[i] - b.gold_sd[i])) << ' ';
            s << "\"/>\n";
        }
        s << "<polyline class=\"gold\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < b.kl.size(); ++i) s << num(X(b.kl[i])) << ',' << num(YG(b.gold_mean[i])) << ' ';
        s << "\"/>\n";
        s << "<polyline class=\"proxy\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\" points=\"";
        for (std::size_t i = 0; i < b.kl.size(); ++i) s << num(X(b.kl[i])) << ',' << num(YP(b.proxy_mean[i])) << ' ';
        s << "\"/>\n";
        const double ly = T + 16.0 * static_cast<double>(c) + 10;
        s << "<line x1=\"" << num(W - R + 75) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(W - R + 95) << "\" y2=\""
          << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        s << "<text x=\"" << num(W - R + 99) << "\" y=\"" << num(ly + 4) << "\">" << escape(b.label) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void plot_curves(std::span<const fs::path> files, const fs::path& out, const CurvePlotOptions& opts) {
    if (files.empty()) throw ConfigError("plot: no curve files given");
    std::vector<CurveData> curves;
    for (const auto& f : files) curves.push_back(read_curve_csv(f));
    const auto bands = aggregate_curves(curves, opts.kl_cap);
    write_file(out, render_curves_svg(bands, opts));
}

BarAxis bar_axis_from_string(const std::string& s) {
    if (s == "rm_size") return BarAxis::rm_size;
    if (s == "data_size") return BarAxis::data_size;
    if (s == "k") return BarAxis::k;
    if (s == "lambda") return BarAxis::lambda;
    if (s == "beta") return BarAxis::beta;
    throw ConfigError("unknown bar axis '" + s + "' (expected rm_size, data_size, k, lambda or beta)");
}

std::string to_string(BarAxis a) {
    switch (a) {
        case BarAxis::rm_size: return "rm_size";
        case BarAxis::data_size: return "data_size";
        case BarAxis::k: return "k";
        case BarAxis::lambda: return "lambda";
        case BarAxis::beta: return "beta";
    }
    return "?";
}

namespace {

struct AxisValue {
    std::vector<double> key;  // sort key
    std::string text;

    bool operator<(const AxisValue& o) const { return key != o.key ? key < o.key : text < o.text; }
    bool operator==(const AxisValue& o) const { return text == o.text; }
};

AxisValue axis_value(const RunRecord& r, BarAxis axis) {
    switch (axis) {
        case BarAxis::rm_size: {
            double params = 0.0;
            std::string t;
            for (std::size_t i = 0; i < r.rm_hidden.size(); ++i) {
                params += r.rm_hidden[i];
                t += (i ? "x" : "") + std::to_string(r.rm_hidden[i]);
            }
            return {{static_cast<double>(r.rm_hidden.size()), params}, t};
        }
        case BarAxis::data_size: return {{static_cast<double>(r.pairs)}, std::to_string(r.pairs)};
        case BarAxis::k: return {{static_cast<double>(r.k)}, std::to_string(r.k)};
        case BarAxis::lambda: return {{r.combiner.lambda}, fmt_double(r.combiner.lambda)};
        case BarAxis::beta: return {{r.beta}, fmt_double(r.beta)};
    }
    return {};
}

/// Series key: mode order, then lambda.
std::pair<std::pair<int, double>, std::string> family(const RunRecord& r, BarAxis axis) {
    const auto& c = r.combiner;
    const int order = static_cast<int>(c.mode);
    if (c.mode == CombinerMode::single) return {{order, 0.0}, "single"};
    if (c.mode == CombinerMode::uwo && axis != BarAxis::lambda) return {{order, c.lambda}, c.label()};
    return {{order, 0.0}, to_string(c.mode)};
}

}  // namespace

BarChart bar_data(std::span<const RunRecord> records, BarAxis axis, const BarOptions& opts) {
    if (axis == BarAxis::lambda && opts.mode && *opts.mode != CombinerMode::uwo)
        throw ConfigError("plot: the lambda axis only applies to uwo, not " + to_string(*opts.mode));
    std::map<AxisValue, std::map<std::pair<std::pair<int, double>, std::string>, std::pair<double, int>>> acc;
    std::map<std::pair<std::pair<int, double>, std::string>, bool> families;
    for (const auto& r : records) {
        if (r.status != RunStatus::ok || r.optimizer.empty()) continue;
        if (opts.mode && r.combiner.mode != *opts.mode) continue;
        if (axis == BarAxis::lambda && r.combiner.mode != CombinerMode::uwo) continue;
        const auto fam = family(r, axis);
        auto& slot = acc[axis_value(r, axis)][fam];
        slot.first += r.final_gold;
        slot.second += 1;
        families[fam] = true;
    }
    if (acc.empty()) throw ConfigError("plot: the summary has no completed runs for axis " + to_string(axis));

    BarChart chart;
    chart.axis = axis;
    for (const auto& [fam, _] : families) chart.series.push_back(fam.second);
    std::vector<std::string> absent;
    for (const auto& [value, fams] : acc) {
        chart.groups.push_back(value.text);
        std::vector<double> row;
        for (const auto& [fam, _] : families) {
            auto it = fams.find(fam);
            if (it == fams.end()) {
                absent.push_back(to_string(axis) + "=" + value.text + " combiner=" + fam.second);
                row.push_back(std::numeric_limits<double>::quiet_NaN());
            } else {
                row.push_back(it->second.first / it->second.second);
            }
        }
        chart.heights.push_back(std::move(row));
    }
    for (const auto& want : opts.required)
        if (std::find(chart.groups.begin(), chart.groups.end(), want) == chart.groups.end())
            absent.push_back(to_string(axis) + "=" + want + " (all combiners)");
    if (!absent.empty()) {
        std::string msg = "plot: the summary lacks cells for";
        for (const auto& a : absent) msg += "\n  " + a;
        throw ConfigError(msg);
    }
    return chart;
}

std::string render_bars_svg(const BarChart& chart, const std::string& title) {
    constexpr double W = 760, H = 440, L = 70, R = 130, T = 40, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    Range y;
    y.add(0.0);
    for (const auto& row : chart.heights)
        for (double v : row) y.add(v);
    y.pad();
    auto Y = [&](double v) { return T + ph * (1.0 - (v - y.lo) / (y.hi - y.lo)); };
    const double gw = pw / static_cast<double>(chart.groups.size());
    const double bw = 0.8 * gw / static_cast<double>(std::max<std::size_t>(1, chart.series.size()));

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    if (!title.empty())
        s << "<text x=\"" << num(L + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
          << "</text>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << num(Y(0.0)) << "\" x2=\"" << L + pw << "\" y2=\"" << num(Y(0.0))
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = y.lo + (y.hi - y.lo) * i / 4.0;
        s << "<text x=\"" << num(L - 6) << "\" y=\"" << num(Y(v) + 4) << "\" text-anchor=\"end\">" << tick(v)
          << "</text>\n";
    }
    s << "<text transform=\"translate(18," << num(T + ph / 2)
      << ") rotate(-90)\" text-anchor=\"middle\">final gold score</text>\n";
    for (std::size_t g = 0; g < chart.groups.size(); ++g) {
        const double gx = L + gw * static_cast<double>(g) + 0.1 * gw;
        for (std::size_t k = 0; k < chart.series.size(); ++k) {
            const double v = chart.heights[g][k];
            const double top = std::min(Y(v), Y(0.0)), bottom = std::max(Y(v), Y(0.0));
            s << "<rect class=\"bar\" data-group=\"" << escape(chart.groups[g]) << "\" data-series=\""
              << escape(chart.series[k]) << "\" data-value=\"" << fmt_double(v) << "\" x=\""
              << num(gx + bw * static_cast<double>(k)) << "\" y=\"" << num(top) << "\" width=\"" << num(bw)
              << "\" height=\"" << num(bottom - top) << "\" fill=\"" << kPalette[k % std::size(kPalette)] << "\"/>\n";
        }
        s << "<text x=\"" << num(L + gw * (static_cast<double>(g) + 0.5)) << "\" y=\"" << num(T + ph + 18)
          << "\" text-anchor=\"middle\">" << escape(chart.groups[g]) << "</text>\n";
    }
    s << "<text x=\"" << num(L + pw / 2) << "\" y=\"" << num(H - 15) << "\" text-anchor=\"middle\">"
      << to_string(chart.axis) << "</text>\n";
    for (std::size_t k = 0; k < chart.series.size(); ++k) {
        const double ly = T + 16.0 * static_cast<double>(k) + 4;
        s << "<rect x=\"" << num(W - R + 20) << "\" y=\"" << num(ly) << "\" width=\"12\" height=\"12\" fill=\""
          << kPalette[k % std::size(kPalette)] << "\"/>\n";
        s << "<text x=\"" << num(W - R + 38) << "\" y=\"" << num(ly + 10) << "\">" << escape(chart.series[k])
          << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void plot_bars(std::span<const RunRecord> records, BarAxis axis, const fs::path& out, const BarOptions& opts) {
    write_file(out, render_bars_svg(bar_data(records, axis, opts), opts.title));
}

}  // namespace rmlab
