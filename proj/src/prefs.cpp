#include "rmlab/prefs.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rmlab {

std::size_t PreferenceDataset::flipped_count() const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.flipped; }));
}

GeneratedPairs generate_pairs(const PolicyModel& policy_init, std::span<const Prompt> prompts, int pairs_per_prompt,
                              const GenConfig& config, Rng& rng) {
    if (pairs_per_prompt < 1) throw ConfigError("pairs_per_prompt must be >= 1");
    const PolicyModel gen = policy_init.with_decoding(config.temperature, config.top_p);
    GeneratedPairs out;
    out.pairs.reserve(prompts.size() * static_cast<std::size_t>(pairs_per_prompt));
    for (const Prompt& prompt : prompts) {
        auto samples = sample_responses(gen, prompt, 2 * pairs_per_prompt, rng);
        for (int i = 0; i < pairs_per_prompt; ++i) {
            PreferencePair pair;
            pair.prompt_id = prompt.id;
            pair.response_a = std::move(samples[2 * static_cast<std::size_t>(i)].response);
            pair.response_b = std::move(samples[2 * static_cast<std::size_t>(i) + 1].response);
            int tries = 0;
            while (pair.response_a == pair.response_b && tries < config.max_resample) {
                pair.response_b = sample_response(gen, prompt, rng).response;
                ++tries;
            }
            if (pair.response_a == pair.response_b) ++out.collision_warnings;
            out.pairs.push_back(std::move(pair));
        }
    }
    return out;
}

namespace {

const Prompt& find_prompt(std::span<const Prompt> prompts, int id) {
    if (id >= 0 && static_cast<std::size_t>(id) < prompts.size() && prompts[static_cast<std::size_t>(id)].id == id)
        return prompts[static_cast<std::size_t>(id)];
    for (const auto& p : prompts)
        if (p.id == id) return p;
    throw ShapeError("pair references unknown prompt " + std::to_string(id));
}

}  // namespace

void label_with_gold(const GoldRewardModel& gold, std::span<const Prompt> prompts, std::vector<PreferencePair>& pairs) {
    for (auto& pair : pairs) {
        const Prompt& prompt = find_prompt(prompts, pair.prompt_id);
        const Response both[2] = {pair.response_a, pair.response_b};
        const Vector s = gold_scores(gold, prompt, both);
        pair.gold_a = s(0);
        pair.gold_b = s(1);
        pair.label = pair.gold_b > pair.gold_a ? Label::B : Label::A;
        pair.flipped = false;
    }
}

std::vector<std::size_t> select_noise_indices(std::size_t n, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("noise rate must lie in [0, 1]");
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(count, n));
    std::sort(order.begin(), order.end());
    return order;
}

void apply_flips(std::vector<PreferencePair>& pairs, std::span<const std::size_t> indices) {
    for (std::size_t i : indices) {
        if (i >= pairs.size()) throw ShapeError("flip index out of range");
        pairs[i].label = other(pairs[i].label);
        pairs[i].flipped = !pairs[i].flipped;
    }
}

PreferenceDataset inject_noise(const PreferenceDataset& dataset, double noise_rate, Rng& rng) {
    PreferenceDataset out = dataset;
    const auto idx = select_noise_indices(out.pairs.size(), noise_rate, rng);
    apply_flips(out.pairs, idx);
    out.noise_rate = noise_rate;
    return out;
}

DatasetSplit split_dataset(const PreferenceDataset& dataset, double val_fraction, Rng& rng) {
    if (!(val_fraction > 0.0 && val_fraction < 0.5)) throw ConfigError("val_fraction must lie in (0, 0.5)");
    const std::size_t n = dataset.pairs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    DatasetSplit split;
    split.train = dataset;
    split.validation = dataset;
    split.train.pairs.clear();
    split.validation.pairs.clear();
    for (std::size_t k = 0; k < n; ++k) {
        auto& dst = k < n_val ? split.validation.pairs : split.train.pairs;
        dst.push_back(dataset.pairs[order[k]]);
    }
    return split;
}

namespace {

constexpr const char* kDatasetMagic = "# rmlab-preferences 1";

std::string join_tokens(const Response& r) {
    std::string s;
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(r.tokens[i]);
    }
    return s;
}

Response parse_tokens(const std::string& s) {
    Response r;
    std::istringstream is(s);
    int t;
    while (is >> t) r.tokens.push_back(t);
    return r;
}

}  // namespace

void write_dataset(std::ostream& os, const PreferenceDataset& d) {
    nlohmann::json header{{"noise_rate", d.noise_rate},
                          {"generation_seed", d.generation_seed},
                          {"noise_seed", d.noise_seed},
                          {"world_hash", d.world_hash},
                          {"pairs", d.pairs.size()}};
    os << kDatasetMagic << '\n' << "# " << header.dump() << '\n';
    os << "prompt_id,tokens_a,tokens_b,gold_a,gold_b,label,flipped\n";
    for (const auto& p : d.pairs) {
        os << p.prompt_id << ',' << join_tokens(p.response_a) << ',' << join_tokens(p.response_b) << ','
           << fmt_double(p.gold_a) << ',' << fmt_double(p.gold_b) << ',' << (p.label == Label::A ? 'A' : 'B') << ','
           << (p.flipped ? 1 : 0) << '\n';
    }
}

PreferenceDataset read_dataset(std::istream& is) {
    std::string line;
    std::getline(is, line);
    if (line != kDatasetMagic) throw FormatError("not a preference dataset");
    std::getline(is, line);
    if (line.rfind("# ", 0) != 0) throw FormatError("missing dataset header");
    const auto header = nlohmann::json::parse(line.substr(2));
    PreferenceDataset d;
    d.noise_rate = header.at("noise_rate").get<double>();
    d.generation_seed = header.at("generation_seed").get<std::uint64_t>();
    d.noise_seed = header.at("noise_seed").get<std::uint64_t>();
    d.world_hash = header.at("world_hash").get<std::string>();
    std::getline(is, line);  // column names
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 7) throw FormatError("dataset row has " + std::to_string(f.size()) + " fields");
        PreferencePair p;
        p.prompt_id = std::stoi(f[0]);
        p.response_a = parse_tokens(f[1]);
        p.response_b = parse_tokens(f[2]);
        p.gold_a = parse_double(f[3]);
        p.gold_b = parse_double(f[4]);
        if (f[5] != "A" && f[5] != "B") throw FormatError("bad label '" + f[5] + "'");
        p.label = f[5] == "A" ? Label::A : Label::B;
        p.flipped = f[6] == "1";
        d.pairs.push_back(std::move(p));
    }
    if (d.pairs.size() != header.at("pairs").get<std::size_t>()) throw FormatError("dataset row count mismatch");
    return d;
}

void save_dataset(const std::filesystem::path& path, const PreferenceDataset& d) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    write_dataset(os, d);
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read " + path.string());
    return read_dataset(is);
}

}  // namespace rmlab
