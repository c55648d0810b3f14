#pragma once

// Clipped policy-gradient optimization over one-shot responses with a
// KL-penalized reward, plus the two Monte Carlo KL estimators.

#include "rmlab/combine.hpp"
#include "rmlab/world.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rmlab {

/// r - beta * (logp_current - logp_init)
double penalized_reward(double r, double logp_current, double logp_init, double beta);

/// Monte Carlo mean of log(pi / pi_init) under pi; unbiased but can be negative.
double measure_kl_naive(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                        int samples, Rng& rng);
/// Monte Carlo mean of 0.5 * log(pi / pi_init)^2 under pi; never negative.
double measure_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                  int samples, Rng& rng);
/// Exact prompt-averaged KL(pi || pi_init) by enumeration.
double exact_kl_naive(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts);
/// Exact prompt-averaged E_pi[0.5 * log(pi / pi_init)^2] by enumeration.
double exact_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts);

/// How trajectory rows measure KL: from the step's own rollouts, from fresh
/// samples, or by exact enumeration.
enum class KlMode { rollout, sampled, exact };

struct PpoConfig {
    int steps = 3000;
    int rollouts_per_step = 256;
    int minibatch = 32;
    int ppo_epochs = 4;
    double clip = 0.2;
    double beta = 0.0;
    double learning_rate = 1e-3;
    double baseline_ema = 0.9;
    int log_every = 10;
    KlMode kl_mode = KlMode::rollout;
    int kl_samples = 4096;
    double kl_cap = 20.0;

    void validate() const;
    bool operator==(const PpoConfig&) const = default;
};

void to_json(nlohmann::json& j, const PpoConfig& c);
void from_json(const nlohmann::json& j, PpoConfig& c);

/// Combined and per-member scores for a batch of (prompt, response) items.
using RewardFn = std::function<BatchScores(std::span<const Prompt>, std::span<const int>, std::span<const Response>)>;
/// Gold scores for logging only; may be empty to disable gold logging.
using GoldFn = std::function<Vector(std::span<const Prompt>, std::span<const int>, std::span<const Response>)>;

struct Rollouts {
    std::vector<int> prompt_of;
    std::vector<Response> responses;
    Vector logp_snapshot;
    Vector logp_init;
    BatchScores scores;
    Vector penalized;
};

struct StepStats {
    double proxy_mean = 0.0;
    double variance_mean = 0.0;
    double penalized_mean = 0.0;
    double kl_rollout = 0.0;
    double surrogate = 0.0;
    double clip_fraction = 0.0;
};

struct PpoState {
    PolicyModel policy;
    nn::OptimizerState optimizer;
    double baseline = 0.0;
    bool baseline_ready = false;
};

PpoState make_ppo_state(const PolicyModel& policy_init, const PpoConfig& cfg);

/// Rollouts from the current policy (top_p 1) scored and penalized against pi_init.
Rollouts collect_rollouts(const PpoState& state, const PolicyModel& policy_init, const RewardFn& reward,
                          std::span<const Prompt> prompts, const PpoConfig& cfg, Rng& rng);

/// One optimization step on `rollouts` (whose logp_snapshot is the frozen
/// behaviour policy). Throws NumericError with step/minibatch diagnostics.
StepStats ppo_update(PpoState& state, const Rollouts& rollouts, std::span<const Prompt> prompts, const PpoConfig& cfg,
                     Rng& rng, int step);

/// collect_rollouts followed by ppo_update.
StepStats ppo_step(PpoState& state, const PolicyModel& policy_init, const RewardFn& reward,
                   std::span<const Prompt> prompts, const PpoConfig& cfg, Rng& rng, int step);

/// Value of min(rho * A, clip(rho, 1-eps, 1+eps) * A).
double clipped_surrogate(double ratio, double advantage, double clip);

struct PpoRow {
    int step = 0;
    double kl_nats = 0.0;
    double proxy_mean = 0.0;
    double gold_mean = 0.0;
    double variance_mean = 0.0;
    double penalized_reward_mean = 0.0;
};

struct PpoTrajectory {
    std::vector<PpoRow> rows;
    CombinerConfig combiner;
    double beta = 0.0;
    bool aborted = false;
    std::string abort_reason;
    PolicyModel final_policy;
    /// FNV hash over every post-update parameter vector (gold-blindness audit).
    std::uint64_t param_checksum = 0;
};

PpoTrajectory run_ppo(const World& world, const RewardFn& reward, const GoldFn& gold, const PpoConfig& cfg,
                      std::uint64_t seed);

/// Columns: step,kl_nats,proxy_mean,gold_mean,variance_mean,beta,combiner,lambda,k,seed,world_hash
void write_ppo_csv(std::ostream& os, const PpoTrajectory& t, std::size_t k, std::uint64_t seed,
                   const std::string& world_hash);

/// Reward function backed by an ensemble and a combiner.
RewardFn ensemble_reward(const RewardEnsemble& ensemble, const ResponseEncoder& encoder, const CombinerConfig& c);
/// Reward function that is the gold scorer itself (single-member "ensemble").
RewardFn gold_reward(const GoldRewardModel& gold);
GoldFn gold_logger(const GoldRewardModel& gold);

}  // namespace rmlab
