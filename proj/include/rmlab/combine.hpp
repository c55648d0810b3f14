#pragma once

// Ensemble score combination: a single member, the mean, the worst case
// (minimum), or the mean minus lambda times the population variance.

#include "rmlab/reward_model.hpp"

#include <json.hpp>

#include <span>
#include <string>

namespace rmlab {

enum class CombinerMode { single, mean, wco, uwo };

std::string to_string(CombinerMode m);
CombinerMode combiner_mode_from_string(const std::string& s);

struct CombinerConfig {
    CombinerMode mode = CombinerMode::mean;
    double lambda = 0.5;    // uwo only
    int member_index = 0;   // single only

    /// Throws ConfigError when lambda < 0 or member_index is out of range for k.
    void validate(std::size_t k) const;
    /// Short file-safe identifier, e.g. "single3", "mean", "uwo0.5".
    std::string label() const;

    bool operator==(const CombinerConfig&) const = default;
};

void to_json(nlohmann::json& j, const CombinerConfig& c);
void from_json(const nlohmann::json& j, CombinerConfig& c);

double combine(std::span<const double> scores, const CombinerConfig& config);

/// Population variance (1/k divisor), computed as mean then squared deviations.
double intra_variance(std::span<const double> scores);

/// Column-wise combine of a k x n member-score matrix.
Vector combine_columns(const Matrix& member_scores, const CombinerConfig& config);
Vector variance_columns(const Matrix& member_scores);

struct BatchScores {
    Vector combined;  // n
    Matrix members;   // k x n
};

BatchScores batch_combine(const RewardEnsemble& ensemble, const ResponseEncoder& encoder,
                          const CombinerConfig& config, const Prompt& prompt, std::span<const Response> responses);

}  // namespace rmlab
