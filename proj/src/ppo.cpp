#include "rmlab/ppo.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"
#include "rmlab/json_util.hpp"

#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>

namespace rmlab {

double penalized_reward(double r, double logp_current, double logp_init, double beta) {
    return r - beta * (logp_current - logp_init);
}

namespace {

std::vector<int> round_robin(std::size_t count, std::size_t n_prompts) {
    std::vector<int> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = static_cast<int>(i % n_prompts);
    return idx;
}

template <class F>
double sampled_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                  int samples, Rng& rng, F term) {
    if (samples < 1) throw DomainError("KL estimate needs at least one sample");
    if (prompts.empty()) throw ConfigError("KL estimate needs prompts");
    const auto prompt_of = round_robin(static_cast<std::size_t>(samples), prompts.size());
    const auto drawn = sample_for_prompts(policy, prompts, prompt_of, rng);
    std::vector<Response> rs;
    for (const auto& s : drawn) rs.push_back(s.response);
    const Vector lp = response_logprobs(policy, prompts, prompt_of, rs);
    const Vector li = response_logprobs(policy_init, prompts, prompt_of, rs);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lp.size(); ++i) sum += term(lp(i) - li(i));
    return sum / samples;
}

template <class F>
double enumerated_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                     F term) {
    if (prompts.empty()) throw ConfigError("KL estimate needs prompts");
    double total = 0.0;
    for (const auto& prompt : prompts) {
        const auto lp = all_response_logprobs(policy, prompt);
        const auto li = all_response_logprobs(policy_init, prompt);
        double acc = 0.0;
        for (std::size_t i = 0; i < lp.size(); ++i) {
            if (lp[i] == kNegInf) continue;
            acc += std::exp(lp[i]) * term(lp[i] - li[i]);
        }
        total += acc;
    }
    return total / static_cast<double>(prompts.size());
}

double log_ratio(double r) { return r; }
double half_square(double r) { return 0.5 * r * r; }

}  // namespace

double measure_kl_naive(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                        int samples, Rng& rng) {
    return sampled_kl(policy, policy_init, prompts, samples, rng, log_ratio);
}

double measure_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts,
                  int samples, Rng& rng) {
    return sampled_kl(policy, policy_init, prompts, samples, rng, half_square);
}

double exact_kl_naive(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts) {
    return enumerated_kl(policy, policy_init, prompts, log_ratio);
}

double exact_kl(const PolicyModel& policy, const PolicyModel& policy_init, std::span<const Prompt> prompts) {
    return enumerated_kl(policy, policy_init, prompts, half_square);
}

namespace {

std::string kl_mode_name(KlMode m) {
    switch (m) {
        case KlMode::rollout: return "rollout";
        case KlMode::sampled: return "sampled";
        case KlMode::exact: return "exact";
    }
    return "?";
}

KlMode kl_mode_from(const std::string& s) {
    if (s == "rollout") return KlMode::rollout;
    if (s == "sampled") return KlMode::sampled;
    if (s == "exact") return KlMode::exact;
    throw ConfigError("unknown kl_mode '" + s + "'");
}

}  // namespace

void PpoConfig::validate() const {
    if (steps < 0 || rollouts_per_step < 1 || minibatch < 1 || ppo_epochs < 1)
        throw ConfigError("ppo: steps >= 0, rollouts_per_step, minibatch, ppo_epochs >= 1 required");
    if (rollouts_per_step % minibatch != 0) throw ConfigError("ppo: rollouts_per_step must be divisible by minibatch");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo: clip must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("ppo: beta must be >= 0");
    if (!(learning_rate >= 0.0)) throw ConfigError("ppo: learning rate must be >= 0");
    if (!(baseline_ema >= 0.0 && baseline_ema < 1.0)) throw ConfigError("ppo: baseline_ema must lie in [0, 1)");
    if (log_every < 1 || kl_samples < 1) throw ConfigError("ppo: log_every and kl_samples must be >= 1");
}

void to_json(nlohmann::json& j, const PpoConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"rollouts_per_step", c.rollouts_per_step},
                       {"minibatch", c.minibatch},
                       {"ppo_epochs", c.ppo_epochs},
                       {"clip", c.clip},
                       {"beta", c.beta},
                       {"lr", c.learning_rate},
                       {"baseline_ema", c.baseline_ema},
                       {"log_every", c.log_every},
                       {"kl_mode", kl_mode_name(c.kl_mode)},
                       {"kl_samples", c.kl_samples},
                       {"kl_cap", c.kl_cap}};
}

void from_json(const nlohmann::json& j, PpoConfig& c) {
    json_util::Reader r(j, "ppo");
    r.get("steps", c.steps);
    r.get("rollouts_per_step", c.rollouts_per_step);
    r.get("minibatch", c.minibatch);
    r.get("ppo_epochs", c.ppo_epochs);
    r.get("clip", c.clip);
    r.get("beta", c.beta);
    r.get("lr", c.learning_rate);
    r.get("baseline_ema", c.baseline_ema);
    r.get("log_every", c.log_every);
    std::string mode = kl_mode_name(c.kl_mode);
    if (r.get("kl_mode", mode)) c.kl_mode = kl_mode_from(mode);
    r.get("kl_samples", c.kl_samples);
    r.get("kl_cap", c.kl_cap);
    r.finish();
    c.validate();
}

double clipped_surrogate(double ratio, double advantage, double clip) {
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    return std::min(ratio * advantage, clipped * advantage);
}

PpoState make_ppo_state(const PolicyModel& policy_init, const PpoConfig& cfg) {
    PpoState s;
    s.policy = policy_init.with_decoding(1.0, 1.0);
    s.optimizer = nn::OptimizerState::make(nn::Algorithm::adam, cfg.learning_rate, s.policy.net.params);
    return s;
}

Rollouts collect_rollouts(const PpoState& state, const PolicyModel& policy_init, const RewardFn& reward,
                          std::span<const Prompt> prompts, const PpoConfig& cfg, Rng& rng) {
    Rollouts r;
    r.prompt_of = round_robin(static_cast<std::size_t>(cfg.rollouts_per_step), prompts.size());
    auto samples = sample_for_prompts(state.policy, prompts, r.prompt_of, rng);
    r.logp_snapshot.resize(static_cast<Eigen::Index>(samples.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.logp_snapshot(static_cast<Eigen::Index>(i)) = samples[i].logprob;
        r.responses.push_back(std::move(samples[i].response));
    }
    const PolicyModel init = policy_init.with_decoding(1.0, 1.0);
    r.logp_init = response_logprobs(init, prompts, r.prompt_of, r.responses);
    r.scores = reward(prompts, r.prompt_of, r.responses);
    r.penalized.resize(r.logp_snapshot.size());
    for (Eigen::Index i = 0; i < r.penalized.size(); ++i)
        r.penalized(i) = penalized_reward(r.scores.combined(i), r.logp_snapshot(i), r.logp_init(i), cfg.beta);
    return r;
}

StepStats ppo_update(PpoState& state, const Rollouts& ro, std::span<const Prompt> prompts, const PpoConfig& cfg,
                     Rng& rng, int step) {
    const auto n = ro.penalized.size();
    StepStats st;
    st.proxy_mean = ro.scores.combined.mean();
    st.variance_mean = variance_columns(ro.scores.members).mean();
    st.penalized_mean = ro.penalized.mean();
    st.kl_rollout = 0.5 * (ro.logp_snapshot - ro.logp_init).array().square().mean();
    if (!std::isfinite(st.penalized_mean))
        throw NumericError("ppo step " + std::to_string(step) + ": non-finite penalized reward");

    if (!state.baseline_ready) {
        state.baseline = st.penalized_mean;
        state.baseline_ready = true;
    }
    Vector adv = ro.penalized.array() - state.baseline;
    state.baseline = cfg.baseline_ema * state.baseline + (1.0 - cfg.baseline_ema) * st.penalized_mean;
    const double mu = adv.mean();
    const double sd = std::sqrt((adv.array() - mu).square().mean());
    if (sd < 1e-8) {
        adv.setZero();
    } else {
        adv = (adv.array() - mu) / sd;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    const auto mb = static_cast<std::size_t>(cfg.minibatch);
    double surrogate_sum = 0.0;
    std::size_t clipped = 0, seen = 0;
    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += mb) {
            const std::size_t end = std::min(order.size(), start + mb);
            std::vector<int> pof;
            std::vector<Response> rs;
            for (std::size_t k = start; k < end; ++k) {
                pof.push_back(ro.prompt_of[static_cast<std::size_t>(order[k])]);
                rs.push_back(ro.responses[static_cast<std::size_t>(order[k])]);
            }
            const PolicyBatchEval eval(state.policy, prompts, pof, rs);
            const double b = static_cast<double>(end - start);
            std::vector<double> weights(end - start, 0.0);
            for (std::size_t k = start; k < end; ++k) {
                const auto i = order[k];
                const double ratio = std::exp(eval.logprobs()(static_cast<Eigen::Index>(k - start)) - ro.logp_snapshot(i));
                const double a = adv(i);
                const double s = clipped_surrogate(ratio, a, cfg.clip);
                if (!std::isfinite(s))
                    throw NumericError("ppo step " + std::to_string(step) + ", minibatch " +
                                       std::to_string(start / mb) + ": non-finite surrogate (ratio " +
                                       fmt_double(ratio) + ", advantage " + fmt_double(a) + ")");
                surrogate_sum += s;
                ++seen;
                const bool unclipped_active = ratio * a <= std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
                if (unclipped_active) {
                    weights[k - start] = -ratio * a / b;  // descend on the negated objective
                } else {
                    ++clipped;
                }
            }
            auto grad = eval.gradient(weights);
            nn::optimizer_step(state.optimizer, state.policy.net.params, grad);
        }
    }
    st.surrogate = seen ? surrogate_sum / static_cast<double>(seen) : 0.0;
    st.clip_fraction = seen ? static_cast<double>(clipped) / static_cast<double>(seen) : 0.0;
    return st;
}

StepStats ppo_step(PpoState& state, const PolicyModel& policy_init, const RewardFn& reward,
                   std::span<const Prompt> prompts, const PpoConfig& cfg, Rng& rng, int step) {
    const Rollouts ro = collect_rollouts(state, policy_init, reward, prompts, cfg, rng);
    return ppo_update(state, ro, prompts, cfg, rng, step);
}

namespace {

std::uint64_t checksum_params(std::uint64_t h, const nn::NetworkParams& p) {
    for (const auto& l : p.layers) {
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) h = mix64(h ^ std::bit_cast<std::uint64_t>(l.weight.data()[i]));
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) h = mix64(h ^ std::bit_cast<std::uint64_t>(l.bias.data()[i]));
    }
    return h;
}

}  // namespace

PpoTrajectory run_ppo(const World& world, const RewardFn& reward, const GoldFn& gold, const PpoConfig& cfg,
                      std::uint64_t seed) {
    cfg.validate();
    PpoTrajectory traj;
    traj.beta = cfg.beta;
    PpoState state = make_ppo_state(world.policy_init, cfg);
    Rng rng = make_rng(seed, "ppo.rollouts");
    Rng kl_rng = make_rng(seed, "ppo.kl");
    const std::span<const Prompt> prompts(world.prompts);
    const PolicyModel init = world.policy_init.with_decoding(1.0, 1.0);
    for (int step = 0; step <= cfg.steps; ++step) {
        try {
            const Rollouts ro = collect_rollouts(state, world.policy_init, reward, prompts, cfg, rng);
            if (step % cfg.log_every == 0 || step == cfg.steps) {
                PpoRow row;
                row.step = step;
                row.proxy_mean = ro.scores.combined.mean();
                row.variance_mean = variance_columns(ro.scores.members).mean();
                row.penalized_reward_mean = ro.penalized.mean();
                switch (cfg.kl_mode) {
                    case KlMode::rollout:
                        row.kl_nats = 0.5 * (ro.logp_snapshot - ro.logp_init).array().square().mean();
                        break;
                    case KlMode::sampled: row.kl_nats = measure_kl(state.policy, init, prompts, cfg.kl_samples, kl_rng); break;
                    case KlMode::exact: row.kl_nats = exact_kl(state.policy, init, prompts); break;
                }
                if (gold) row.gold_mean = gold(prompts, ro.prompt_of, ro.responses).mean();
                traj.rows.push_back(row);
            }
            if (step == cfg.steps) break;
            ppo_update(state, ro, prompts, cfg, rng, step);
            traj.param_checksum = checksum_params(traj.param_checksum, state.policy.net.params);
        } catch (const Error& e) {
            traj.aborted = true;
            traj.abort_reason = e.what();
            break;
        }
    }
    traj.final_policy = state.policy;
    return traj;
}

void write_ppo_csv(std::ostream& os, const PpoTrajectory& t, std::size_t k, std::uint64_t seed,
                   const std::string& world_hash) {
    os << "step,kl_nats,proxy_mean,gold_mean,variance_mean,beta,combiner,lambda,k,seed,world_hash\n";
    const std::string lambda = t.combiner.mode == CombinerMode::uwo ? fmt_double(t.combiner.lambda) : "";
    for (const auto& r : t.rows) {
        os << r.step << ',' << fmt_double(r.kl_nats) << ',' << fmt_double(r.proxy_mean) << ','
           << fmt_double(r.gold_mean) << ',' << fmt_double(r.variance_mean) << ',' << fmt_double(t.beta) << ','
           << t.combiner.label() << ',' << lambda << ',' << k << ',' << seed << ',' << world_hash << '\n';
    }
}

RewardFn ensemble_reward(const RewardEnsemble& ensemble, const ResponseEncoder& encoder, const CombinerConfig& c) {
    c.validate(ensemble.k());
    return [&ensemble, &encoder, c](std::span<const Prompt> prompts, std::span<const int> prompt_of,
                                    std::span<const Response> rs) {
        BatchScores b;
        b.members = member_scores(ensemble, encoder, prompts, prompt_of, rs);
        b.combined = combine_columns(b.members, c);
        return b;
    };
}

RewardFn gold_reward(const GoldRewardModel& gold) {
    return [&gold](std::span<const Prompt> prompts, std::span<const int> prompt_of, std::span<const Response> rs) {
        const Matrix x = gold.encoder.encode(prompts, prompt_of, rs);
        BatchScores b;
        b.members = nn::forward_batch(gold.net.spec, gold.net.params, x).array() - gold.center;
        b.combined = b.members.row(0).transpose();
        return b;
    };
}

GoldFn gold_logger(const GoldRewardModel& gold) {
    return [&gold](std::span<const Prompt> prompts, std::span<const int> prompt_of, std::span<const Response> rs) {
        const Matrix x = gold.encoder.encode(prompts, prompt_of, rs);
        return Vector((nn::forward_batch(gold.net.spec, gold.net.params, x).array() - gold.center).row(0).transpose());
    };
}

}  // namespace rmlab
