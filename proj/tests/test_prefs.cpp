#include "rmlab/errors.hpp"
#include "rmlab/prefs.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace rmlab;

namespace {

WorldSpec small_spec() {
    WorldSpec s;
    s.vocab_size = 6;
    s.response_length = 3;
    s.embed_dim = 4;
    s.prompt_dim = 3;
    s.n_prompts = 4;
    s.master_seed = 5;
    s.gold_hidden = {16, 16};
    s.policy_hidden = {8};
    s.normalize_samples = 1000;
    return s;
}

PreferenceDataset labeled(const World& w, int per_prompt, std::uint64_t seed) {
    Rng rng = make_rng(seed, "test.gen");
    GeneratedPairs g = generate_pairs(w.policy_init, w.prompts, per_prompt, GenConfig{}, rng);
    label_with_gold(w.gold, w.prompts, g.pairs);
    PreferenceDataset d;
    d.pairs = std::move(g.pairs);
    return d;
}

}  // namespace

TEST_CASE("label noise flips exactly round(rate * n) labels") {
    PreferenceDataset d;
    d.pairs.resize(2048);
    Rng rng = make_rng(1, "test.noise");
    const auto noisy = inject_noise(d, 0.25, rng);
    CHECK(noisy.flipped_count() == 512);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < d.pairs.size(); ++i) changed += noisy.pairs[i].label != d.pairs[i].label;
    CHECK(changed == 512);
    CHECK(noisy.noise_rate == 0.25);

    Rng r0 = make_rng(2, "test.noise");
    CHECK(inject_noise(d, 0.0, r0).flipped_count() == 0);
    Rng r1 = make_rng(3, "test.noise");
    const auto all = inject_noise(d, 1.0, r1);
    CHECK(all.flipped_count() == 2048);
    for (const auto& p : all.pairs) CHECK(p.label == Label::B);
}

TEST_CASE("noise rounding and validation") {
    Rng rng = make_rng(4, "test.noise");
    CHECK(select_noise_indices(10, 0.25, rng).size() == 3);  // round(2.5) away from zero
    CHECK(select_noise_indices(7, 0.35, rng).size() == 2);
    CHECK(select_noise_indices(0, 0.5, rng).empty());
    CHECK_THROWS_AS(select_noise_indices(10, 1.5, rng), ConfigError);
    CHECK_THROWS_AS(select_noise_indices(10, -0.1, rng), ConfigError);
    const auto idx = select_noise_indices(100, 0.3, rng);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
}

TEST_CASE("flipping twice restores the dataset") {
    const World w = build_world(small_spec());
    const PreferenceDataset d = labeled(w, 8, 1);
    PreferenceDataset twice = d;
    const std::vector<std::size_t> idx{0, 3, 5, 17};
    apply_flips(twice.pairs, idx);
    apply_flips(twice.pairs, idx);
    CHECK(twice == d);
    const std::vector<std::size_t> bad{d.pairs.size()};
    CHECK_THROWS_AS(apply_flips(twice.pairs, bad), ShapeError);
}

TEST_CASE("gold labels pick the strictly higher score, ties to A") {
    const World w = build_world(small_spec());
    const PreferenceDataset d = labeled(w, 16, 2);
    for (const auto& p : d.pairs) {
        const Prompt& prompt = w.prompts[static_cast<std::size_t>(p.prompt_id)];
        CHECK(p.gold_a == gold_score(w.gold, prompt, p.response_a));
        CHECK(p.gold_b == gold_score(w.gold, prompt, p.response_b));
        CHECK(p.label == (p.gold_b > p.gold_a ? Label::B : Label::A));
        CHECK_FALSE(p.flipped);
    }
    std::vector<PreferencePair> tie(1);
    tie[0].response_a = tie[0].response_b = Response{{1, 1, 1}};
    label_with_gold(w.gold, w.prompts, tie);
    CHECK(tie[0].label == Label::A);
}

TEST_CASE("pair generation covers every prompt and avoids identical responses") {
    const World w = build_world(small_spec());
    Rng rng = make_rng(3, "test.gen");
    const GeneratedPairs g = generate_pairs(w.policy_init, w.prompts, 10, GenConfig{}, rng);
    CHECK(g.pairs.size() == 40);
    std::map<int, int> per_prompt;
    for (const auto& p : g.pairs) per_prompt[p.prompt_id]++;
    for (int i = 0; i < 4; ++i) CHECK(per_prompt[i] == 10);
    int same = 0;
    for (const auto& p : g.pairs) same += p.response_a == p.response_b;
    CHECK(same == g.collision_warnings);
    CHECK(same == 0);
}

TEST_CASE("a one-response world exhausts resampling and counts collisions") {
    WorldSpec s = small_spec();
    s.vocab_size = 1;
    const World w = build_world(s);
    Rng rng = make_rng(4, "test.gen");
    const GeneratedPairs g = generate_pairs(w.policy_init, w.prompts, 3, GenConfig{1.0, 0.9, 5}, rng);
    CHECK(g.collision_warnings == 12);
}

TEST_CASE("nucleus generation only produces nucleus responses") {
    const World w = build_world(small_spec());
    Rng rng = make_rng(5, "test.gen");
    const GeneratedPairs g = generate_pairs(w.policy_init, w.prompts, 50, GenConfig{1.0, 0.6, 100}, rng);
    const PolicyModel nucleus = w.policy_init.with_decoding(1.0, 0.6);
    for (const auto& p : g.pairs)
        CHECK(std::isfinite(response_logprob(nucleus, w.prompts[static_cast<std::size_t>(p.prompt_id)], p.response_a)));
}

TEST_CASE("split sizes and disjointness") {
    const World w = build_world(small_spec());
    const PreferenceDataset d = labeled(w, 25, 6);
    Rng rng = make_rng(7, "test.split");
    const DatasetSplit s = split_dataset(d, 0.1, rng);
    CHECK(s.validation.pairs.size() == 10);
    CHECK(s.train.pairs.size() == 90);
    std::multiset<std::string> all, parts;
    auto key = [](const PreferencePair& p) {
        std::ostringstream os;
        os << p.prompt_id;
        for (int t : p.response_a.tokens) os << ',' << t;
        for (int t : p.response_b.tokens) os << ';' << t;
        return os.str();
    };
    for (const auto& p : d.pairs) all.insert(key(p));
    for (const auto& p : s.train.pairs) parts.insert(key(p));
    for (const auto& p : s.validation.pairs) parts.insert(key(p));
    CHECK(all == parts);
    CHECK_THROWS_AS(split_dataset(d, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(split_dataset(d, 0.6, rng), ConfigError);
}

TEST_CASE("dataset csv round-trips") {
    const World w = build_world(small_spec());
    Rng nr = make_rng(8, "test.noise");
    PreferenceDataset d = inject_noise(labeled(w, 6, 8), 0.25, nr);
    d.generation_seed = 123;
    d.noise_seed = 456;
    d.world_hash = w.hash();
    std::stringstream ss;
    write_dataset(ss, d);
    const PreferenceDataset back = read_dataset(ss);
    CHECK(back == d);
}

TEST_CASE("generation is deterministic in the stream seed") {
    const World w = build_world(small_spec());
    CHECK(labeled(w, 5, 9) == labeled(w, 5, 9));
    CHECK_FALSE(labeled(w, 5, 9) == labeled(w, 5, 10));
}
