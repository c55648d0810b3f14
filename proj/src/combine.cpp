#include "rmlab/combine.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"
#include "rmlab/json_util.hpp"

#include <algorithm>
#include <cmath>

namespace rmlab {

std::string to_string(CombinerMode m) {
    switch (m) {
        case CombinerMode::single: return "single";
        case CombinerMode::mean: return "mean";
        case CombinerMode::wco: return "wco";
        case CombinerMode::uwo: return "uwo";
    }
    return "?";
}

CombinerMode combiner_mode_from_string(const std::string& s) {
    if (s == "single") return CombinerMode::single;
    if (s == "mean") return CombinerMode::mean;
    if (s == "wco") return CombinerMode::wco;
    if (s == "uwo") return CombinerMode::uwo;
    throw ConfigError("unknown combiner mode '" + s + "'");
}

void CombinerConfig::validate(std::size_t k) const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("combiner lambda must be finite and >= 0");
    if (mode == CombinerMode::single && (member_index < 0 || static_cast<std::size_t>(member_index) >= k))
        throw ConfigError("single-member index " + std::to_string(member_index) + " out of range for k=" +
                          std::to_string(k));
}

std::string CombinerConfig::label() const {
    switch (mode) {
        case CombinerMode::single: return "single" + std::to_string(member_index);
        case CombinerMode::uwo: return "uwo" + fmt_double(lambda);
        default: return to_string(mode);
    }
}

void to_json(nlohmann::json& j, const CombinerConfig& c) {
    j = nlohmann::json{{"mode", to_string(c.mode)}};
    if (c.mode == CombinerMode::uwo) j["lambda"] = c.lambda;
    if (c.mode == CombinerMode::single) j["member_index"] = c.member_index;
}

void from_json(const nlohmann::json& j, CombinerConfig& c) {
    json_util::Reader r(j, "combiner");
    std::string mode;
    r.require("mode", mode);
    c.mode = combiner_mode_from_string(mode);
    r.get("lambda", c.lambda);
    r.get("member_index", c.member_index);
    r.finish();
    if (!(c.lambda >= 0.0)) throw ConfigError("combiner lambda must be >= 0");
}

namespace {

double mean_of(std::span<const double> s) {
    double sum = 0.0;
    for (double v : s) sum += v;
    return sum / static_cast<double>(s.size());
}

}  // namespace

double intra_variance(std::span<const double> scores) {
    if (scores.empty()) throw ConfigError("variance of an empty score list");
    const double mu = mean_of(scores);
    double ss = 0.0;
    for (double v : scores) ss += (v - mu) * (v - mu);
    return ss / static_cast<double>(scores.size());
}

double combine(std::span<const double> scores, const CombinerConfig& config) {
    if (scores.empty()) throw ConfigError("cannot combine an empty score list");
    config.validate(scores.size());
    switch (config.mode) {
        case CombinerMode::single: return scores[static_cast<std::size_t>(config.member_index)];
        case CombinerMode::mean: return mean_of(scores);
        case CombinerMode::wco: return *std::min_element(scores.begin(), scores.end());
        case CombinerMode::uwo: return mean_of(scores) - config.lambda * intra_variance(scores);
    }
    return 0.0;
}

Vector combine_columns(const Matrix& member_scores, const CombinerConfig& config) {
    Vector out(member_scores.cols());
    std::vector<double> col(static_cast<std::size_t>(member_scores.rows()));
    for (Eigen::Index c = 0; c < member_scores.cols(); ++c) {
        for (Eigen::Index r = 0; r < member_scores.rows(); ++r) col[static_cast<std::size_t>(r)] = member_scores(r, c);
        out(c) = combine(col, config);
    }
    return out;
}

Vector variance_columns(const Matrix& member_scores) {
    Vector out(member_scores.cols());
    std::vector<double> col(static_cast<std::size_t>(member_scores.rows()));
    for (Eigen::Index c = 0; c < member_scores.cols(); ++c) {
        for (Eigen::Index r = 0; r < member_scores.rows(); ++r) col[static_cast<std::size_t>(r)] = member_scores(r, c);
        out(c) = intra_variance(col);
    }
    return out;
}

BatchScores batch_combine(const RewardEnsemble& ensemble, const ResponseEncoder& encoder,
                          const CombinerConfig& config, const Prompt& prompt, std::span<const Response> responses) {
    config.validate(ensemble.k());
    const std::vector<int> prompt_of(responses.size(), 0);
    BatchScores out;
    out.members = member_scores(ensemble, encoder, std::span<const Prompt>(&prompt, 1), prompt_of, responses);
    out.combined = combine_columns(out.members, config);
    return out;
}

}  // namespace rmlab
