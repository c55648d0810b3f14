#include "rmlab/errors.hpp"
#include "rmlab/ppo.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace rmlab;

namespace {

WorldSpec tiny_spec() {
    WorldSpec s;
    s.vocab_size = 4;
    s.response_length = 3;
    s.embed_dim = 3;
    s.prompt_dim = 2;
    s.n_prompts = 4;
    s.master_seed = 13;
    s.gold_hidden = {16, 16};
    s.policy_hidden = {8};
    s.normalize_samples = 1000;
    return s;
}

PpoConfig quick(int steps = 20) {
    PpoConfig c;
    c.steps = steps;
    c.rollouts_per_step = 64;
    c.minibatch = 16;
    c.ppo_epochs = 2;
    c.learning_rate = 1e-2;
    c.log_every = 5;
    return c;
}

RewardFn constant_reward(double v) {
    return [v](std::span<const Prompt>, std::span<const int>, std::span<const Response> rs) {
        BatchScores b;
        b.members = Matrix::Constant(2, static_cast<Eigen::Index>(rs.size()), v);
        b.combined = Vector::Constant(static_cast<Eigen::Index>(rs.size()), v);
        return b;
    };
}

}  // namespace

TEST_CASE("penalized reward and clipped surrogate formulas") {
    CHECK(penalized_reward(1.0, -2.0, -3.0, 0.5) == 0.5);
    CHECK(penalized_reward(1.0, -2.0, -3.0, 0.0) == 1.0);
    CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4));
    CHECK(clipped_surrogate(0.5, 2.0, 0.2) == doctest::Approx(1.0));
    CHECK(clipped_surrogate(0.5, -2.0, 0.2) == doctest::Approx(-1.6));
    CHECK(clipped_surrogate(1.5, -2.0, 0.2) == doctest::Approx(-3.0));
    CHECK(clipped_surrogate(1.1, 1.0, 0.2) == doctest::Approx(1.1));
}

TEST_CASE("exact KL is zero for identical policies and positive otherwise") {
    const World w = build_world(tiny_spec());
    const PolicyModel init = w.policy_init.with_decoding(1.0, 1.0);
    CHECK(exact_kl(init, init, w.prompts) == 0.0);
    CHECK(exact_kl_naive(init, init, w.prompts) == 0.0);
    PolicyModel moved = init;
    moved.net.params.layers.back().bias(1) += 0.7;
    moved.net.params.layers.front().weight(0, 0) -= 0.4;
    CHECK(exact_kl(moved, init, w.prompts) > 0.0);
    CHECK(exact_kl_naive(moved, init, w.prompts) > 0.0);
}

TEST_CASE("sampled KL estimators converge to their enumerated values") {
    const World w = build_world(tiny_spec());
    const PolicyModel init = w.policy_init.with_decoding(1.0, 1.0);
    PolicyModel moved = init;
    moved.net.params.layers.back().bias(2) += 0.8;
    Rng rng = make_rng(1, "test.kl");
    const double exact = exact_kl(moved, init, w.prompts), exact_naive = exact_kl_naive(moved, init, w.prompts);
    CHECK(measure_kl(moved, init, w.prompts, 40000, rng) == doctest::Approx(exact).epsilon(0.05));
    CHECK(measure_kl_naive(moved, init, w.prompts, 40000, rng) == doctest::Approx(exact_naive).epsilon(0.1));
    CHECK(measure_kl(init, init, w.prompts, 100, rng) == 0.0);
    CHECK_THROWS_AS(measure_kl(init, init, w.prompts, 0, rng), DomainError);
}

TEST_CASE("zero learning rate leaves the policy at its initialization") {
    const World w = build_world(tiny_spec());
    PpoConfig c = quick();
    c.learning_rate = 0.0;
    const PpoTrajectory t = run_ppo(w, gold_reward(w.gold), gold_logger(w.gold), c, 1);
    CHECK_FALSE(t.aborted);
    CHECK(t.final_policy.net == w.policy_init.net);
    for (const auto& r : t.rows) CHECK(r.kl_nats == 0.0);
}

TEST_CASE("constant rewards produce no update") {
    const World w = build_world(tiny_spec());
    const PpoTrajectory t = run_ppo(w, constant_reward(3.0), {}, quick(), 2);
    CHECK(t.final_policy.net == w.policy_init.net);
    for (const auto& r : t.rows) CHECK(r.variance_mean == 0.0);
}

TEST_CASE("optimizing gold raises gold") {
    const World w = build_world(tiny_spec());
    const PpoTrajectory t = run_ppo(w, gold_reward(w.gold), gold_logger(w.gold), quick(60), 3);
    REQUIRE(t.rows.size() == 13);
    CHECK(t.rows.front().step == 0);
    CHECK(t.rows.back().step == 60);
    CHECK(t.rows.back().gold_mean > t.rows.front().gold_mean + 0.1);
    CHECK(t.rows.back().kl_nats > 0.0);
}

TEST_CASE("the optimizer never sees gold: logging does not change the parameters") {
    const World w = build_world(tiny_spec());
    const PpoConfig c = quick();
    RewardFn proxy = [&](std::span<const Prompt> prompts, std::span<const int> pof, std::span<const Response> rs) {
        BatchScores b = gold_reward(w.gold)(prompts, pof, rs);
        for (std::size_t i = 0; i < rs.size(); ++i) b.combined(static_cast<Eigen::Index>(i)) += 0.5 * rs[i].tokens[2];
        return b;
    };
    const PpoTrajectory with_gold = run_ppo(w, proxy, gold_logger(w.gold), c, 4);
    const PpoTrajectory without = run_ppo(w, proxy, {}, c, 4);
    GoldFn junk = [](std::span<const Prompt>, std::span<const int>, std::span<const Response> rs) {
        return Vector(Vector::Constant(static_cast<Eigen::Index>(rs.size()), -7.0));
    };
    const PpoTrajectory other = run_ppo(w, proxy, junk, c, 4);
    CHECK(with_gold.param_checksum != 0);
    CHECK(with_gold.param_checksum == without.param_checksum);
    CHECK(with_gold.param_checksum == other.param_checksum);
    CHECK(with_gold.final_policy.net == without.final_policy.net);
}

TEST_CASE("runs are deterministic in the seed") {
    const World w = build_world(tiny_spec());
    const PpoConfig c = quick();
    const auto a = run_ppo(w, gold_reward(w.gold), gold_logger(w.gold), c, 5);
    const auto b = run_ppo(w, gold_reward(w.gold), gold_logger(w.gold), c, 5);
    const auto d = run_ppo(w, gold_reward(w.gold), gold_logger(w.gold), c, 6);
    std::ostringstream sa, sb, sd;
    write_ppo_csv(sa, a, 1, 5, w.hash());
    write_ppo_csv(sb, b, 1, 5, w.hash());
    write_ppo_csv(sd, d, 1, 6, w.hash());
    CHECK(sa.str() == sb.str());
    CHECK(sa.str() != sd.str());
    CHECK(sa.str().rfind("step,kl_nats,proxy_mean,gold_mean,variance_mean,beta,combiner,lambda,k,seed,world_hash\n", 0) == 0);
}

TEST_CASE("a large KL penalty keeps the policy near its initialization") {
    const World w = build_world(tiny_spec());
    PpoConfig free = quick(60), tight = quick(60);
    tight.beta = 5.0;
    const PolicyModel init = w.policy_init.with_decoding(1.0, 1.0);
    const auto a = run_ppo(w, gold_reward(w.gold), {}, free, 7);
    const auto b = run_ppo(w, gold_reward(w.gold), {}, tight, 7);
    CHECK(exact_kl(b.final_policy, init, w.prompts) < 0.5 * exact_kl(a.final_policy, init, w.prompts));
}

TEST_CASE("non-finite rewards abort the run with step diagnostics") {
    const World w = build_world(tiny_spec());
    RewardFn bad = [](std::span<const Prompt>, std::span<const int>, std::span<const Response> rs) {
        BatchScores b;
        b.members = Matrix::Zero(1, static_cast<Eigen::Index>(rs.size()));
        b.combined = Vector::Constant(static_cast<Eigen::Index>(rs.size()), NAN);
        return b;
    };
    const auto t = run_ppo(w, bad, {}, quick(), 8);
    CHECK(t.aborted);
    CHECK(t.abort_reason.find("ppo step 0") != std::string::npos);
}

TEST_CASE("kl modes agree on the initial policy and exact mode matches enumeration") {
    const World w = build_world(tiny_spec());
    PpoConfig c = quick(10);
    c.kl_mode = KlMode::exact;
    const auto t = run_ppo(w, gold_reward(w.gold), {}, c, 9);
    CHECK(t.rows.front().kl_nats == 0.0);
    CHECK(t.rows.back().kl_nats ==
          doctest::Approx(exact_kl(t.final_policy, w.policy_init.with_decoding(1.0, 1.0), w.prompts)).epsilon(1e-12));
}

TEST_CASE("ppo config json is strict and validated") {
    PpoConfig c = quick();
    c.beta = 0.01;
    c.kl_mode = KlMode::sampled;
    const nlohmann::json j = c;
    CHECK(j.get<PpoConfig>() == c);
    nlohmann::json bad = j;
    bad["gamma"] = 0.99;
    CHECK_THROWS_AS(bad.get<PpoConfig>(), ConfigError);
    bad = j;
    bad["minibatch"] = 7;
    CHECK_THROWS_AS(bad.get<PpoConfig>(), ConfigError);
    bad = j;
    bad["kl_mode"] = "analytic";
    CHECK_THROWS_AS(bad.get<PpoConfig>(), ConfigError);
    bad = j;
    bad["beta"] = -1.0;
    CHECK_THROWS_AS(bad.get<PpoConfig>(), ConfigError);
}
