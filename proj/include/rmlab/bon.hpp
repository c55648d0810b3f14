#pragma once

// Best-of-n: analytic KL, argmax selection, and gold-score estimators.

#include "rmlab/combine.hpp"
#include "rmlab/prefs.hpp"
#include "rmlab/world.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace rmlab {

/// log n - (n - 1) / n. Throws DomainError for n < 1.
double kl_bon(long n);

/// Index of the maximum; ties go to the smallest index.
std::size_t bon_select(std::span<const double> proxy_scores);

/// Weights C(i-1, n-1) / C(N, n) for i = 1..N (zero below n), via the
/// downward recurrence from w_N = n / N.
std::vector<double> bon_weights(std::size_t N, std::size_t n);

/// Unbiased estimate of E[gold(argmax proxy over n draws)] for n = 1..n_max,
/// reusing one pool of N items. Entry n-1 holds the estimate for n.
std::vector<double> bon_unbiased_curve(std::span<const double> proxy_scores, std::span<const double> gold_scores,
                                       std::size_t n_max);

/// Scores a batch of responses to one prompt with the optimized objective.
using ResponseScorer = std::function<Vector(const Prompt&, std::span<const Response>)>;

struct NaiveEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

/// Mean over `trials` of the gold score of the proxy-argmax among n fresh samples.
NaiveEstimate bon_naive_estimate(const PolicyModel& policy, const Prompt& prompt, const ResponseScorer& proxy,
                                 const GoldRewardModel& gold, int n, int trials, Rng& rng);

/// KL(best-of-n rank distribution || uniform) over M items with distinct scores.
double bon_rank_kl(std::size_t M, long n);

struct BonConfig {
    int n_pool = 2048;
    int n_max = 1024;
    GenConfig generation;  // top_p 0.9 by default

    void validate() const;
};

void to_json(nlohmann::json& j, const BonConfig& c);
void from_json(const nlohmann::json& j, BonConfig& c);

/// Shared sample pool: per prompt, member scores (k x N) and gold scores (N).
struct BonPool {
    std::vector<Matrix> member_scores;
    std::vector<Vector> gold;
    /// Per-prompt index of the pool (for diagnostics); responses are not retained.
    int n_pool = 0;
};

using MemberScorer = std::function<Matrix(const Prompt&, std::span<const Response>)>;

BonPool sample_bon_pool(const World& world, const PolicyModel& policy, const MemberScorer& members, const BonConfig& cfg,
                        Rng& rng);

struct BonRow {
    int n = 0;
    double kl_nats = 0.0;
    double proxy_mean = 0.0;
    double gold_mean = 0.0;
    double gold_stderr = 0.0;
};

struct BonCurve {
    CombinerConfig combiner;
    std::vector<BonRow> rows;
    /// Per-prompt gold estimate at n_max (for win-rates).
    std::vector<double> final_gold_per_prompt;
    int n_max = 0;
    int n_pool = 0;
};

BonCurve bon_curve_from_pool(const BonPool& pool, const CombinerConfig& combiner, int n_max);

std::vector<BonCurve> run_bon_experiment(const World& world, const PolicyModel& policy, const RewardEnsemble& ensemble,
                                         std::span<const CombinerConfig> combiners, const BonConfig& cfg, Rng& rng);

struct CurveMeta {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::string world_hash;
    double beta = 0.0;
};

/// Columns: n,kl_nats,proxy_mean,gold_mean,gold_stderr,combiner,lambda,k,seed,world_hash
void write_bon_csv(std::ostream& os, const BonCurve& curve, const CurveMeta& meta);

}  // namespace rmlab
