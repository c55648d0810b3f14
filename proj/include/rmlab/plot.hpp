#pragma once

// SVG figures: gold/proxy curves against KL on a square-root axis, and
// grouped final-gold bar charts over one sweep axis.

#include "rmlab/harness.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rmlab {

/// One curve file (best-of-n or PPO schema), reduced to the plotted columns.
struct CurveData {
    std::string label;  // combiner label
    std::vector<double> kl;
    std::vector<double> proxy;
    std::vector<double> gold;
};

/// Reads either curve schema; throws FormatError on anything else.
CurveData read_curve_csv(const std::filesystem::path& path);

/// Per-point mean and sample standard deviation over seeds of one combiner.
struct CurveBand {
    std::string label;
    std::vector<double> kl;
    std::vector<double> gold_mean, gold_sd;
    std::vector<double> proxy_mean, proxy_sd;
    int runs = 0;
};

/// Groups curves by label (first-seen order), averages point-wise, and drops
/// points whose mean KL exceeds kl_cap. Curves of one label must have equal length.
std::vector<CurveBand> aggregate_curves(std::span<const CurveData> curves, double kl_cap);

struct CurvePlotOptions {
    double kl_cap = 20.0;
    std::string title;
};

std::string render_curves_svg(std::span<const CurveBand> bands, const CurvePlotOptions& opts);

/// Throws ConfigError on empty input.
void plot_curves(std::span<const std::filesystem::path> files, const std::filesystem::path& out,
                 const CurvePlotOptions& opts = {});

enum class BarAxis { rm_size, data_size, k, lambda, beta };
BarAxis bar_axis_from_string(const std::string& s);
std::string to_string(BarAxis a);

struct BarOptions {
    /// Restrict to one combiner mode; the lambda axis only admits uwo.
    std::optional<CombinerMode> mode;
    /// Axis values that must be present (as printed in the chart); empty = whatever the summary has.
    std::vector<std::string> required;
    std::string title;
};

struct BarChart {
    BarAxis axis = BarAxis::k;
    std::vector<std::string> groups;  // axis values in ascending order
    std::vector<std::string> series;  // combiner families
    /// heights[g][s]: mean final gold over seeds (and members for single); NaN when absent.
    std::vector<std::vector<double>> heights;
};

/// Throws ConfigError for inapplicable axes and for absent (axis value, combiner) cells.
BarChart bar_data(std::span<const RunRecord> records, BarAxis axis, const BarOptions& opts = {});
std::string render_bars_svg(const BarChart& chart, const std::string& title);
void plot_bars(std::span<const RunRecord> records, BarAxis axis, const std::filesystem::path& out,
               const BarOptions& opts = {});

}  // namespace rmlab
