#include "rmlab/errors.hpp"
#include "rmlab/world.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

using namespace rmlab;

namespace {

WorldSpec tiny_spec(std::uint64_t seed = 3) {
    WorldSpec s;
    s.vocab_size = 4;
    s.response_length = 3;
    s.embed_dim = 3;
    s.prompt_dim = 2;
    s.n_prompts = 5;
    s.master_seed = seed;
    s.gold_hidden = {16, 16};
    s.policy_hidden = {8};
    s.normalize_samples = 2000;
    return s;
}

double logsumexp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

TEST_CASE("response index is lexicographic with the first token most significant") {
    const Response r{{2, 0, 3}};
    CHECK(response_index(r, 4) == 2 * 16 + 0 * 4 + 3);
    for (std::uint64_t i = 0; i < 64; ++i) CHECK(response_index(response_from_index(i, 4, 3), 4) == i);
    const auto all = enumerate_responses(tiny_spec());
    REQUIRE(all.size() == 64);
    CHECK(std::is_sorted(all.begin(), all.end()));
}

TEST_CASE("enumeration is refused beyond the bound") {
    WorldSpec s = tiny_spec();
    s.vocab_size = 16;
    s.response_length = 6;
    CHECK_FALSE(s.enumerable());
    CHECK_THROWS_AS(enumerate_responses(s), EnumerationRefused);
    s.response_length = 5;
    CHECK(s.enumerable());
}

TEST_CASE("step distribution: temperature, nucleus truncation and greedy") {
    Vector logits(4);
    logits << std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05);
    const Vector full = step_distribution(logits, 1.0, 1.0);
    CHECK(full(0) == doctest::Approx(0.5));
    CHECK(full(3) == doctest::Approx(0.05));
    const Vector nucleus = step_distribution(logits, 1.0, 0.7);
    CHECK(nucleus(0) == doctest::Approx(0.625));
    CHECK(nucleus(1) == doctest::Approx(0.375));
    CHECK(nucleus(2) == 0.0);
    CHECK(nucleus(3) == 0.0);
    const Vector greedy = step_distribution(logits, 0.0, 1.0);
    CHECK(greedy(0) == 1.0);
    CHECK(greedy.sum() == 1.0);
    // temperature 2 squares-roots the odds
    const Vector hot = step_distribution(logits, 2.0, 1.0);
    const double z = std::sqrt(0.5) + std::sqrt(0.3) + std::sqrt(0.15) + std::sqrt(0.05);
    CHECK(hot(1) == doctest::Approx(std::sqrt(0.3) / z));
}

TEST_CASE("enumerated response probabilities sum to one") {
    const World w = build_world(tiny_spec());
    for (double top_p : {1.0, 0.9, 0.5}) {
        const PolicyModel pol = w.policy_init.with_decoding(1.0, top_p);
        for (const auto& p : w.prompts) CHECK(std::abs(std::exp(logsumexp(all_response_logprobs(pol, p))) - 1.0) < 1e-9);
    }
}

TEST_CASE("enumerated log-probabilities agree with per-response scoring") {
    const World w = build_world(tiny_spec());
    const PolicyModel pol = w.policy_init.with_decoding(1.0, 0.8);
    const auto all = enumerate_responses(w.spec);
    const auto lp = all_response_logprobs(pol, w.prompts[1]);
    for (std::size_t i = 0; i < all.size(); i += 7) {
        const double direct = response_logprob(pol, w.prompts[1], all[i]);
        if (std::isinf(lp[i]))
            CHECK(std::isinf(direct));
        else
            CHECK(direct == doctest::Approx(lp[i]).epsilon(1e-12));
    }
}

TEST_CASE("sampling frequencies follow the enumerated distribution") {
    const World w = build_world(tiny_spec());
    const Prompt& prompt = w.prompts[0];
    const auto lp = all_response_logprobs(w.policy_init, prompt);
    Rng rng = make_rng(7, "test.sample");
    const int n = 40000;
    std::map<std::uint64_t, int> counts;
    for (const auto& s : sample_responses(w.policy_init, prompt, n, rng)) {
        counts[response_index(s.response, 4)]++;
        CHECK(s.logprob == doctest::Approx(lp[response_index(s.response, 4)]).epsilon(1e-12));
    }
    double chi2 = 0.0;
    int cells = 0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
        const double e = n * std::exp(lp[i]);
        if (e < 5) continue;
        const double o = counts.count(i) ? counts[i] : 0;
        chi2 += (o - e) * (o - e) / e;
        ++cells;
    }
    // chi-square with ~cells dof: mean cells, sd sqrt(2 cells); allow 5 sd
    CHECK(chi2 < cells + 5.0 * std::sqrt(2.0 * cells));
}

TEST_CASE("nucleus sampling never emits tokens outside the nucleus") {
    const World w = build_world(tiny_spec());
    const PolicyModel pol = w.policy_init.with_decoding(1.0, 0.5);
    Rng rng = make_rng(8, "test.sample");
    for (const auto& s : sample_responses(pol, w.prompts[2], 2000, rng)) CHECK(std::isfinite(s.logprob));
}

TEST_CASE("encoder lays out context then token embeddings in position order") {
    const World w = build_world(tiny_spec());
    const Response r{{3, 1, 1}};
    const Matrix x = w.encoder.encode(w.prompts[4], std::span<const Response>(&r, 1));
    REQUIRE(x.rows() == 2 + 3 * 3);
    CHECK(x.col(0).head(2) == w.prompts[4].context);
    CHECK(x.col(0).segment(2, 3) == w.encoder.embeddings().row(3).transpose());
    CHECK(x.col(0).segment(5, 3) == w.encoder.embeddings().row(1).transpose());
    CHECK(x.col(0).segment(8, 3) == w.encoder.embeddings().row(1).transpose());
    const Response bad{{4, 0, 0}};
    CHECK_THROWS(w.encoder.check(bad));
}

TEST_CASE("gold is centered on the initial policy") {
    const World w = build_world(tiny_spec());
    // exact expectation by enumeration, averaged over prompts
    const auto all = enumerate_responses(w.spec);
    double mean = 0.0;
    for (const auto& p : w.prompts) {
        const auto lp = all_response_logprobs(w.policy_init, p);
        const Vector g = gold_scores(w.gold, p, all);
        for (std::size_t i = 0; i < all.size(); ++i) mean += std::exp(lp[i]) * g(static_cast<Eigen::Index>(i));
    }
    mean /= static_cast<double>(w.prompts.size());
    // Monte Carlo centering with 2000 draws: within a few standard errors of zero
    double var = 0.0;
    for (const auto& p : w.prompts) {
        const auto lp = all_response_logprobs(w.policy_init, p);
        const Vector g = gold_scores(w.gold, p, all);
        for (std::size_t i = 0; i < all.size(); ++i) var += std::exp(lp[i]) * g(static_cast<Eigen::Index>(i)) * g(static_cast<Eigen::Index>(i));
    }
    var /= static_cast<double>(w.prompts.size());
    CHECK(std::abs(mean) < 4.0 * std::sqrt(var / 2000.0));
}

TEST_CASE("gold_score equals the raw network output minus the center") {
    const World w = build_world(tiny_spec());
    const Response r{{0, 2, 1}};
    const Matrix x = w.encoder.encode(w.prompts[0], std::span<const Response>(&r, 1));
    const Vector col = x.col(0);
    const double raw = nn::forward(w.gold.net.spec, w.gold.net.params, std::span<const double>(col.data(), col.size()))(0);
    CHECK(gold_score(w.gold, w.prompts[0], r) == doctest::Approx(raw - w.gold.center).epsilon(1e-14));
}

TEST_CASE("worlds are deterministic in their seed and survive a save/load round trip") {
    const World a = build_world(tiny_spec(3)), b = build_world(tiny_spec(3)), c = build_world(tiny_spec(4));
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_world(ss, a);
    const World back = read_world(ss);
    CHECK(back.hash() == a.hash());
    CHECK(back.gold.center == a.gold.center);
    CHECK(back.spec == a.spec);
}

TEST_CASE("token prior shifts the initial policy's output bias only") {
    WorldSpec s = tiny_spec();
    const World plain = build_world(s);
    s.token_prior_scale = 2.0;
    const World prior = build_world(s);
    CHECK(plain.policy_init.net.params.layers.back().bias.isZero());
    CHECK_FALSE(prior.policy_init.net.params.layers.back().bias.isZero());
    CHECK(plain.policy_init.net.params.layers.front().weight == prior.policy_init.net.params.layers.front().weight);
    CHECK(plain.gold.net.params.layers.front().weight == prior.gold.net.params.layers.front().weight);
}

TEST_CASE("gold gain scales hidden weight matrices but not the output layer") {
    WorldSpec s = tiny_spec();
    s.normalize_samples = 0;
    const World base = build_world(s);
    s.gold_gain = 2.0;
    const World steep = build_world(s);
    CHECK(steep.gold.net.params.layers[0].weight == 2.0 * base.gold.net.params.layers[0].weight);
    CHECK(steep.gold.net.params.layers.back().weight == base.gold.net.params.layers.back().weight);
}

TEST_CASE("world spec json is strict and round-trips") {
    WorldSpec s = tiny_spec();
    s.embed_scale = 2.5;
    const nlohmann::json j = s;
    CHECK(j.get<WorldSpec>() == s);
    nlohmann::json bad = j;
    bad["vocab"] = 3;
    CHECK_THROWS_AS(bad.get<WorldSpec>(), ConfigError);
    WorldSpec neg = s;
    neg.vocab_size = 0;
    CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("batched log-prob gradient matches finite differences of the log-probabilities") {
    const World w = build_world(tiny_spec());
    const PolicyModel pol = w.policy_init;
    Rng rng = make_rng(9, "test.grad");
    std::vector<int> prompt_of{0, 1, 2, 3};
    std::vector<Response> rs;
    for (int p : prompt_of) rs.push_back(sample_response(pol, w.prompts[static_cast<std::size_t>(p)], rng).response);
    const std::vector<double> weights{0.5, -1.0, 2.0, 0.25};
    const LogprobGradient g = response_logprob_grad(pol, w.prompts, prompt_of, rs, weights);
    auto objective = [&](const PolicyModel& m) {
        const Vector lp = response_logprobs(m, w.prompts, prompt_of, rs);
        double s = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * lp(static_cast<Eigen::Index>(i));
        return s;
    };
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t l = 0; l < pol.net.params.layers.size(); ++l) {
        const auto& W = pol.net.params.layers[l].weight;
        for (Eigen::Index i = 0; i < W.size(); i += 3) {
            PolicyModel plus = pol, minus = pol;
            plus.net.params.layers[l].weight.data()[i] += h;
            minus.net.params.layers[l].weight.data()[i] -= h;
            const double fd = (objective(plus) - objective(minus)) / (2 * h);
            worst = std::max(worst, std::abs(fd - g.grad.layers[l].weight.data()[i]));
        }
    }
    CHECK(worst < 1e-6);
}
