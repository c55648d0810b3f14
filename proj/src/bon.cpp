#include "rmlab/bon.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"
#include "rmlab/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace rmlab {

double kl_bon(long n) {
    if (n < 1) throw DomainError("best-of-n requires n >= 1");
    const double d = static_cast<double>(n);
    return std::log(d) - (d - 1.0) / d;
}

std::size_t bon_select(std::span<const double> proxy_scores) {
    if (proxy_scores.empty()) throw DomainError("bon_select on an empty list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < proxy_scores.size(); ++i)
        if (proxy_scores[i] > proxy_scores[best]) best = i;
    return best;
}

std::vector<double> bon_weights(std::size_t N, std::size_t n) {
    if (n < 1 || n > N) throw DomainError("bon_weights requires 1 <= n <= N");
    std::vector<double> w(N, 0.0);
    // w_i (1-based) = C(i-1, n-1) / C(N, n); w_N = n / N and
    // w_{i-1} = w_i * (i - n) / (i - 1).
    w[N - 1] = static_cast<double>(n) / static_cast<double>(N);
    for (std::size_t i = N; i > n; --i) {
        w[i - 2] = w[i - 1] * static_cast<double>(i - n) / static_cast<double>(i - 1);
        if (w[i - 2] == 0.0) break;
    }
    return w;
}

std::vector<double> bon_unbiased_curve(std::span<const double> proxy_scores, std::span<const double> gold_scores,
                                       std::size_t n_max) {
    const std::size_t N = proxy_scores.size();
    if (gold_scores.size() != N) throw ShapeError("proxy and gold score lists differ in length");
    if (n_max < 1 || n_max > N) throw DomainError("n_max must lie in [1, N]");
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // ascending rank; among equal scores the lower index ranks higher, matching bon_select
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return proxy_scores[a] < proxy_scores[b] || (proxy_scores[a] == proxy_scores[b] && a > b);
    });
    std::vector<double> sorted_gold(N);
    for (std::size_t i = 0; i < N; ++i) sorted_gold[i] = gold_scores[order[i]];
    std::vector<double> out(n_max);
    for (std::size_t n = 1; n <= n_max; ++n) {
        double w = static_cast<double>(n) / static_cast<double>(N);
        double acc = w * sorted_gold[N - 1];
        for (std::size_t i = N; i > n; --i) {
            w *= static_cast<double>(i - n) / static_cast<double>(i - 1);
            if (w == 0.0) break;
            acc += w * sorted_gold[i - 2];
        }
        out[n - 1] = acc;
    }
    return out;
}

NaiveEstimate bon_naive_estimate(const PolicyModel& policy, const Prompt& prompt, const ResponseScorer& proxy,
                                 const GoldRewardModel& gold, int n, int trials, Rng& rng) {
    if (trials < 1) throw DomainError("bon_naive_estimate requires trials >= 1");
    if (n < 1) throw DomainError("best-of-n requires n >= 1");
    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::vector<Response> rs;
        for (auto& s : sample_responses(policy, prompt, n, rng)) rs.push_back(std::move(s.response));
        const Vector scores = proxy(prompt, rs);
        const auto pick = bon_select(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())));
        const double g = gold_score(gold, prompt, rs[pick]);
        sum += g;
        sumsq += g * g;
    }
    NaiveEstimate e;
    e.mean = sum / trials;
    const double var = trials > 1 ? (sumsq - trials * e.mean * e.mean) / (trials - 1) : 0.0;
    e.stderr_ = std::sqrt(std::max(var, 0.0) / trials);
    return e;
}

double bon_rank_kl(std::size_t M, long n) {
    if (M < 1) throw DomainError("bon_rank_kl requires M >= 1");
    if (n < 1) throw DomainError("best-of-n requires n >= 1");
    const double m = static_cast<double>(M);
    const double d = static_cast<double>(n);
    double kl = 0.0;
    double prev = 0.0;  // (j-1)/M to the n
    for (std::size_t j = 1; j <= M; ++j) {
        const double cur = std::pow(static_cast<double>(j) / m, d);
        const double p = cur - prev;
        if (p > 0.0) kl += p * std::log(p * m);
        prev = cur;
    }
    return kl;
}

void BonConfig::validate() const {
    if (n_pool < 1 || n_max < 1 || n_max > n_pool) throw ConfigError("bon: need 1 <= n_max <= n_pool");
    if (!(generation.top_p > 0.0 && generation.top_p <= 1.0)) throw ConfigError("bon: top_p must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const BonConfig& c) {
    j = nlohmann::json{{"n_pool", c.n_pool},
                       {"n_max", c.n_max},
                       {"top_p", c.generation.top_p},
                       {"temperature", c.generation.temperature}};
}

void from_json(const nlohmann::json& j, BonConfig& c) {
    json_util::Reader r(j, "bon");
    r.get("n_pool", c.n_pool);
    r.get("n_max", c.n_max);
    r.get("top_p", c.generation.top_p);
    r.get("temperature", c.generation.temperature);
    r.finish();
    c.validate();
}

BonPool sample_bon_pool(const World& world, const PolicyModel& policy, const MemberScorer& members, const BonConfig& cfg,
                        Rng& rng) {
    cfg.validate();
    const PolicyModel gen = policy.with_decoding(cfg.generation.temperature, cfg.generation.top_p);
    BonPool pool;
    pool.n_pool = cfg.n_pool;
    for (const Prompt& prompt : world.prompts) {
        std::vector<Response> rs;
        rs.reserve(static_cast<std::size_t>(cfg.n_pool));
        for (auto& s : sample_responses(gen, prompt, cfg.n_pool, rng)) rs.push_back(std::move(s.response));
        pool.member_scores.push_back(members(prompt, rs));
        pool.gold.push_back(gold_scores(world.gold, prompt, rs));
    }
    return pool;
}

BonCurve bon_curve_from_pool(const BonPool& pool, const CombinerConfig& combiner, int n_max) {
    if (pool.gold.empty()) throw ConfigError("empty best-of-n pool");
    const auto P = pool.gold.size();
    const auto nm = static_cast<std::size_t>(n_max);
    std::vector<std::vector<double>> gold_curves, proxy_curves;
    for (std::size_t p = 0; p < P; ++p) {
        const Vector proxy = combine_columns(pool.member_scores[p], combiner);
        const std::span<const double> ps(proxy.data(), static_cast<std::size_t>(proxy.size()));
        gold_curves.push_back(bon_unbiased_curve(
            ps, std::span<const double>(pool.gold[p].data(), static_cast<std::size_t>(pool.gold[p].size())), nm));
        proxy_curves.push_back(bon_unbiased_curve(ps, ps, nm));
    }
    BonCurve curve;
    curve.combiner = combiner;
    curve.n_max = n_max;
    curve.n_pool = pool.n_pool;
    for (std::size_t n = 1; n <= nm; ++n) {
        BonRow row;
        row.n = static_cast<int>(n);
        row.kl_nats = kl_bon(static_cast<long>(n));
        double gs = 0.0, gss = 0.0, ps = 0.0;
        for (std::size_t p = 0; p < P; ++p) {
            gs += gold_curves[p][n - 1];
            gss += gold_curves[p][n - 1] * gold_curves[p][n - 1];
            ps += proxy_curves[p][n - 1];
        }
        const double dp = static_cast<double>(P);
        row.gold_mean = gs / dp;
        row.proxy_mean = ps / dp;
        const double var = P > 1 ? std::max(0.0, (gss - dp * row.gold_mean * row.gold_mean) / (dp - 1.0)) : 0.0;
        row.gold_stderr = std::sqrt(var / dp);
        curve.rows.push_back(row);
    }
    for (std::size_t p = 0; p < P; ++p) curve.final_gold_per_prompt.push_back(gold_curves[p][nm - 1]);
    return curve;
}

std::vector<BonCurve> run_bon_experiment(const World& world, const PolicyModel& policy, const RewardEnsemble& ensemble,
                                         std::span<const CombinerConfig> combiners, const BonConfig& cfg, Rng& rng) {
    for (const auto& c : combiners) c.validate(ensemble.k());
    const MemberScorer scorer = [&](const Prompt& prompt, std::span<const Response> rs) {
        const std::vector<int> prompt_of(rs.size(), 0);
        return member_scores(ensemble, world.encoder, std::span<const Prompt>(&prompt, 1), prompt_of, rs);
    };
    const BonPool pool = sample_bon_pool(world, policy, scorer, cfg, rng);
    std::vector<BonCurve> out;
    for (const auto& c : combiners) out.push_back(bon_curve_from_pool(pool, c, cfg.n_max));
    return out;
}

void write_bon_csv(std::ostream& os, const BonCurve& curve, const CurveMeta& meta) {
    os << "n,kl_nats,proxy_mean,gold_mean,gold_stderr,combiner,lambda,k,seed,world_hash\n";
    const std::string lambda = curve.combiner.mode == CombinerMode::uwo ? fmt_double(curve.combiner.lambda) : "";
    for (const auto& r : curve.rows) {
        os << r.n << ',' << fmt_double(r.kl_nats) << ',' << fmt_double(r.proxy_mean) << ',' << fmt_double(r.gold_mean)
           << ',' << fmt_double(r.gold_stderr) << ',' << curve.combiner.label() << ',' << lambda << ',' << meta.k << ','
           << meta.seed << ',' << meta.world_hash << '\n';
    }
}

}  // namespace rmlab
