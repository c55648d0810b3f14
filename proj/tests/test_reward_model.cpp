#include "rmlab/errors.hpp"
#include "rmlab/reward_model.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rmlab;

namespace {

WorldSpec small_spec() {
    WorldSpec s;
    s.vocab_size = 6;
    s.response_length = 3;
    s.embed_dim = 4;
    s.prompt_dim = 3;
    s.n_prompts = 8;
    s.master_seed = 21;
    s.gold_hidden = {32, 32};
    s.policy_hidden = {8};
    s.normalize_samples = 1000;
    return s;
}

struct Fixture {
    World world = build_world(small_spec());
    DatasetSplit split;
    ScoringContext ctx;

    explicit Fixture(double noise = 0.0, int per_prompt = 64) {
        Rng rng = make_rng(1, "test.gen");
        GeneratedPairs g = generate_pairs(world.policy_init, world.prompts, per_prompt, GenConfig{}, rng);
        label_with_gold(world.gold, world.prompts, g.pairs);
        PreferenceDataset d;
        d.pairs = std::move(g.pairs);
        Rng nr = make_rng(2, "test.noise");
        d = inject_noise(d, noise, nr);
        Rng sr = make_rng(3, "test.split");
        split = split_dataset(d, 0.2, sr);
        ctx = ScoringContext{&world.encoder, world.prompts};
    }
};

double reference_bt(double c, double r) { return std::log1p(std::exp(-(c - r))); }

}  // namespace

TEST_CASE("bt loss equals -log sigmoid of the score gap and stays finite at extremes") {
    CHECK(bt_loss(0.0, 0.0) == doctest::Approx(std::log(2.0)));
    for (double c : {-3.0, -0.5, 0.0, 1.2, 4.0})
        for (double r : {-2.0, 0.0, 0.7, 3.5}) CHECK(bt_loss(c, r) == doctest::Approx(reference_bt(c, r)).epsilon(1e-12));
    CHECK(bt_loss(1000.0, 0.0) == doctest::Approx(0.0));
    CHECK(bt_loss(0.0, 1000.0) == doctest::Approx(1000.0));
    CHECK(std::isfinite(bt_loss(-800.0, 800.0)));
}

TEST_CASE("bt loss gradient matches a finite difference") {
    for (double c : {-2.0, 0.0, 0.3, 5.0})
        for (double r : {-1.0, 0.0, 2.0}) {
            const double h = 1e-6;
            const double fd = (bt_loss(c + h, r) - bt_loss(c - h, r)) / (2 * h);
            CHECK(bt_loss_grad(c, r) == doctest::Approx(fd).epsilon(1e-6));
        }
}

TEST_CASE("pairwise batch gradient matches finite differences of the mean loss") {
    Fixture f;
    RmHyper h;
    const nn::Network net = with_fresh_head(make_trunk_init(f.world.encoder, h, 5), 6);
    std::vector<int> prompt_of;
    std::vector<Response> ch, rj;
    for (std::size_t i = 0; i < 6; ++i) {
        const auto& p = f.split.train.pairs[i];
        prompt_of.push_back(p.prompt_id);
        ch.push_back(p.chosen());
        rj.push_back(p.rejected());
    }
    const Matrix xc = f.world.encoder.encode(f.world.prompts, prompt_of, ch);
    const Matrix xr = f.world.encoder.encode(f.world.prompts, prompt_of, rj);
    const PairLoss pl = pair_loss_and_grad(net, xc, xr);
    auto loss = [&](const nn::Network& n) {
        const Matrix sc = nn::forward_batch(n.spec, n.params, xc), sr = nn::forward_batch(n.spec, n.params, xr);
        double s = 0.0;
        for (Eigen::Index i = 0; i < sc.cols(); ++i) s += reference_bt(sc(0, i), sr(0, i));
        return s / static_cast<double>(sc.cols());
    };
    CHECK(pl.loss == doctest::Approx(loss(net)).epsilon(1e-12));
    const double step = 1e-6;
    double worst = 0.0;
    for (std::size_t l = 0; l < net.params.layers.size(); ++l)
        for (Eigen::Index i = 0; i < net.params.layers[l].weight.size(); i += 5) {
            nn::Network a = net, b = net;
            a.params.layers[l].weight.data()[i] += step;
            b.params.layers[l].weight.data()[i] -= step;
            worst = std::max(worst, std::abs((loss(a) - loss(b)) / (2 * step) - pl.grad.layers[l].weight.data()[i]));
        }
    CHECK(worst < 1e-7);
    // the head bias cancels in every pair
    CHECK(std::abs(pl.grad.layers.back().bias(0)) < 1e-15);
}

TEST_CASE("fresh heads replace only the final layer") {
    Fixture f;
    RmHyper h;
    h.hidden = {8, 8};
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const nn::Network a = with_fresh_head(trunk, 1), b = with_fresh_head(trunk, 2), a2 = with_fresh_head(trunk, 1);
    CHECK(a == a2);
    CHECK(a.params.layers[0] == b.params.layers[0]);
    CHECK(a.params.layers[1] == b.params.layers[1]);
    CHECK_FALSE(a.params.layers[2] == b.params.layers[2]);
    CHECK(a.spec.widths() == std::vector<int>{f.world.encoder.width(), 8, 8, 1});
}

TEST_CASE("learning rate zero leaves the freshly headed network unchanged") {
    Fixture f;
    RmHyper h;
    h.learning_rate = 0.0;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const ProxyRewardModel m = train_rm(trunk, 3, f.split.train, f.split.validation, h, 4, f.ctx);
    CHECK(m.net == with_fresh_head(trunk, 3));
    CHECK(m.history.size() == static_cast<std::size_t>(h.epochs));
}

TEST_CASE("training on clean labels beats chance and lowers the loss") {
    Fixture f;
    RmHyper h;
    h.epochs = 20;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const ProxyRewardModel m = train_rm(trunk, 3, f.split.train, f.split.validation, h, 4, f.ctx);
    CHECK(m.history.back().train_loss < m.history.front().train_loss);
    CHECK(m.val_accuracy > 0.6);
    const Validation v = validate_rm(m.net, f.ctx, f.split.validation.pairs);
    CHECK(v.accuracy == m.val_accuracy);
    CHECK(v.loss == m.val_loss);
}

TEST_CASE("ties count half in validation accuracy") {
    Fixture f;
    RmHyper h;
    nn::Network flat = make_trunk_init(f.world.encoder, h, 7);
    flat.params.layers.back().weight.setZero();
    const Validation v = validate_rm(flat, f.ctx, f.split.validation.pairs);
    CHECK(v.accuracy == 0.5);
    CHECK(v.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("training is deterministic in head and shuffle seeds") {
    Fixture f;
    RmHyper h;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const auto a = train_rm(trunk, 3, f.split.train, f.split.validation, h, 4, f.ctx);
    const auto b = train_rm(trunk, 3, f.split.train, f.split.validation, h, 4, f.ctx);
    const auto c = train_rm(trunk, 3, f.split.train, f.split.validation, h, 5, f.ctx);
    CHECK(a.net == b.net);
    CHECK_FALSE(a.net == c.net);
}

TEST_CASE("centering zeroes the mean training score and preserves every pairwise comparison") {
    Fixture f(0.25);
    RmHyper h;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    ProxyRewardModel m = train_rm(trunk, 3, f.split.train, f.split.validation, h, 4, f.ctx);
    const ProxyRewardModel before = m;
    center_reward_model(m, f.ctx, f.split.train);
    double sum = 0.0;
    for (const auto& p : f.split.train.pairs) {
        const Prompt& pr = f.world.prompts[static_cast<std::size_t>(p.prompt_id)];
        const Response both[2] = {p.response_a, p.response_b};
        sum += rm_scores(m.net, f.ctx, pr, both).sum();
    }
    CHECK(std::abs(sum / (2.0 * static_cast<double>(f.split.train.pairs.size()))) < 1e-12);
    const Validation v0 = validate_rm(before.net, f.ctx, f.split.validation.pairs);
    const Validation v1 = validate_rm(m.net, f.ctx, f.split.validation.pairs);
    CHECK(v1.accuracy == v0.accuracy);
    CHECK(v1.loss == doctest::Approx(v0.loss).epsilon(1e-12));
    CHECK(m.center_offset == doctest::Approx(before.net.params.layers.back().bias(0) - m.net.params.layers.back().bias(0)));
}

TEST_CASE("ensemble members share the trunk init and differ in head and shuffle seeds") {
    Fixture f(0.25);
    RmHyper h;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const RewardEnsemble e = train_ensemble(3, trunk, f.split.train, f.split.validation, h, 40, f.ctx);
    REQUIRE(e.k() == 3);
    CHECK(e.trunk_hash == network_hash(trunk));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(e.members[i].head_seed == 40 + i);
        CHECK(e.members[i].shuffle_seed == 1040 + i);
        ProxyRewardModel solo = train_rm(trunk, 40 + i, f.split.train, f.split.validation, h, 1040 + i, f.ctx);
        center_reward_model(solo, f.ctx, f.split.train);
        CHECK(solo.net == e.members[i].net);
    }
    CHECK_FALSE(e.members[0].net == e.members[1].net);
}

TEST_CASE("member_scores stacks each member's scores") {
    Fixture f;
    RmHyper h;
    h.epochs = 1;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const RewardEnsemble e = train_ensemble(2, trunk, f.split.train, f.split.validation, h, 1, f.ctx);
    std::vector<int> prompt_of{0, 0, 0};
    std::vector<Response> rs{Response{{0, 1, 2}}, Response{{5, 5, 5}}, Response{{3, 0, 1}}};
    const Matrix s = member_scores(e, f.world.encoder, f.world.prompts, prompt_of, rs);
    REQUIRE(s.rows() == 2);
    REQUIRE(s.cols() == 3);
    for (int m = 0; m < 2; ++m) {
        const Vector direct = rm_scores(e.members[static_cast<std::size_t>(m)].net, f.ctx, f.world.prompts[0], rs);
        CHECK((s.row(m).transpose() - direct).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("ensemble checkpoints round-trip and detect tampering") {
    Fixture f(0.25);
    RmHyper h;
    h.epochs = 2;
    const nn::Network trunk = make_trunk_init(f.world.encoder, h, 7);
    const RewardEnsemble e = train_ensemble(2, trunk, f.split.train, f.split.validation, h, 1, f.ctx);
    const auto dir = std::filesystem::temp_directory_path() / "rmlab_test_ensemble";
    std::filesystem::remove_all(dir);
    save_ensemble(dir, e);
    const RewardEnsemble back = load_ensemble(dir);
    REQUIRE(back.k() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.members[i].net == e.members[i].net);
        CHECK(back.members[i].val_accuracy == e.members[i].val_accuracy);
        CHECK(back.members[i].center_offset == e.members[i].center_offset);
        CHECK(back.members[i].history.size() == e.members[i].history.size());
    }
    CHECK(back.trunk_hash == e.trunk_hash);
    {
        std::fstream fs(dir / "member_1.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        std::ostringstream os(std::ios::binary);
        nn::write_checkpoint(os, e.members[1].net);
        fs.seekp(static_cast<std::streamoff>(os.str().size()) - 3);
        fs.put('\x7f');
    }
    CHECK_THROWS(load_ensemble(dir));
    std::filesystem::remove_all(dir);
}

TEST_CASE("hyperparameter json is strict") {
    RmHyper h;
    h.hidden = {64};
    h.activation = nn::Activation::relu;
    h.center = false;
    const nlohmann::json j = h;
    CHECK(j.get<RmHyper>() == h);
    nlohmann::json bad = j;
    bad["dropout"] = 0.1;
    CHECK_THROWS_AS(bad.get<RmHyper>(), ConfigError);
    bad = j;
    bad["optimizer"] = "rmsprop";
    CHECK_THROWS_AS(bad.get<RmHyper>(), ConfigError);
}
