#include "rmlab/world.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/json_util.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rmlab {

void to_json(nlohmann::json& j, const WorldSpec& s) {
    j = nlohmann::json{{"vocab_size", s.vocab_size},
                       {"response_length", s.response_length},
                       {"embed_dim", s.embed_dim},
                       {"prompt_dim", s.prompt_dim},
                       {"n_prompts", s.n_prompts},
                       {"master_seed", s.master_seed},
                       {"gold_hidden", s.gold_hidden},
                       {"policy_hidden", s.policy_hidden},
                       {"embed_scale", s.embed_scale},
                       {"policy_logit_scale", s.policy_logit_scale},
                       {"gold_gain", s.gold_gain},
                       {"token_prior_scale", s.token_prior_scale},
                       {"normalize_samples", s.normalize_samples}};
}

void from_json(const nlohmann::json& j, WorldSpec& s) {
    json_util::Reader r(j, "world");
    r.get("vocab_size", s.vocab_size);
    r.get("response_length", s.response_length);
    r.get("embed_dim", s.embed_dim);
    r.get("prompt_dim", s.prompt_dim);
    r.get("n_prompts", s.n_prompts);
    r.get("master_seed", s.master_seed);
    r.get("gold_hidden", s.gold_hidden);
    r.get("policy_hidden", s.policy_hidden);
    r.get("embed_scale", s.embed_scale);
    r.get("policy_logit_scale", s.policy_logit_scale);
    r.get("gold_gain", s.gold_gain);
    r.get("token_prior_scale", s.token_prior_scale);
    r.get("normalize_samples", s.normalize_samples);
    r.finish();
}

void WorldSpec::validate() const {
    if (vocab_size < 1 || response_length < 1 || embed_dim < 1 || prompt_dim < 1 || n_prompts < 1)
        throw ConfigError("world dimensions must be positive");
    for (int w : gold_hidden)
        if (w < 1) throw ConfigError("gold hidden widths must be positive");
    for (int w : policy_hidden)
        if (w < 1) throw ConfigError("policy hidden widths must be positive");
    if (!(embed_scale > 0.0) || !(policy_logit_scale >= 0.0) || !(gold_gain > 0.0) || !(token_prior_scale >= 0.0)) throw ConfigError("world scales must be positive");
    if (normalize_samples != 0 && normalize_samples < 1000)
        throw ConfigError("normalize_samples must be 0 or >= 1000");
}

std::uint64_t WorldSpec::response_space() const {
    std::uint64_t n = 1;
    for (int i = 0; i < response_length; ++i) {
        if (n > UINT64_MAX / static_cast<std::uint64_t>(vocab_size)) return UINT64_MAX;
        n *= static_cast<std::uint64_t>(vocab_size);
    }
    return n;
}

std::uint64_t response_index(const Response& r, int vocab_size) {
    std::uint64_t idx = 0;
    for (int t : r.tokens) idx = idx * static_cast<std::uint64_t>(vocab_size) + static_cast<std::uint64_t>(t);
    return idx;
}

Response response_from_index(std::uint64_t index, int vocab_size, int length) {
    Response r;
    r.tokens.assign(static_cast<std::size_t>(length), 0);
    for (int t = length - 1; t >= 0; --t) {
        r.tokens[static_cast<std::size_t>(t)] = static_cast<int>(index % static_cast<std::uint64_t>(vocab_size));
        index /= static_cast<std::uint64_t>(vocab_size);
    }
    return r;
}

ResponseEncoder::ResponseEncoder(Matrix embeddings, int prompt_dim, int response_length)
    : table_(std::move(embeddings)), prompt_dim_(prompt_dim), length_(response_length) {}

void ResponseEncoder::check(const Response& r) const {
    if (static_cast<int>(r.tokens.size()) != length_) throw ShapeError("response has the wrong length");
    for (int t : r.tokens)
        if (t < 0 || t >= vocab_size()) throw ShapeError("token outside the vocabulary");
}

Matrix ResponseEncoder::encode(const Prompt& prompt, std::span<const Response> responses) const {
    if (prompt.context.size() != prompt_dim_) throw ShapeError("prompt context has the wrong width");
    const auto n = static_cast<Eigen::Index>(responses.size());
    const auto e = table_.cols();
    Matrix x(width(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const Response& r = responses[static_cast<std::size_t>(c)];
        check(r);
        x.col(c).head(prompt_dim_) = prompt.context;
        for (int t = 0; t < length_; ++t) x.col(c).segment(prompt_dim_ + t * e, e) = table_.row(r.tokens[t]).transpose();
    }
    return x;
}

Matrix ResponseEncoder::encode(std::span<const Prompt> prompts, std::span<const int> prompt_of,
                               std::span<const Response> responses) const {
    if (prompt_of.size() != responses.size()) throw ShapeError("prompt index list does not match responses");
    const auto n = static_cast<Eigen::Index>(responses.size());
    const auto e = table_.cols();
    Matrix x(width(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto pi = prompt_of[static_cast<std::size_t>(c)];
        if (pi < 0 || static_cast<std::size_t>(pi) >= prompts.size()) throw ShapeError("prompt index out of range");
        const Prompt& prompt = prompts[static_cast<std::size_t>(pi)];
        if (prompt.context.size() != prompt_dim_) throw ShapeError("prompt context has the wrong width");
        const Response& r = responses[static_cast<std::size_t>(c)];
        check(r);
        x.col(c).head(prompt_dim_) = prompt.context;
        for (int t = 0; t < length_; ++t) x.col(c).segment(prompt_dim_ + t * e, e) = table_.row(r.tokens[t]).transpose();
    }
    return x;
}

Vector gold_scores(const GoldRewardModel& gold, const Prompt& prompt, std::span<const Response> responses) {
    if (responses.empty()) return Vector();
    const Matrix out = nn::forward_batch(gold.net.spec, gold.net.params, gold.encoder.encode(prompt, responses));
    return (out.row(0).array() - gold.center).matrix().transpose();
}

double gold_score(const GoldRewardModel& gold, const Prompt& prompt, const Response& response) {
    return gold_scores(gold, prompt, std::span<const Response>(&response, 1))(0);
}

PolicyModel PolicyModel::with_decoding(double t, double p) const {
    if (!(t >= 0.0)) throw ConfigError("temperature must be >= 0");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
    PolicyModel copy = *this;
    copy.temperature = t;
    copy.top_p = p;
    return copy;
}

Vector step_distribution(const Vector& logits, double temperature, double top_p) {
    const auto v = logits.size();
    Vector p = Vector::Zero(v);
    if (temperature <= 0.0) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < v; ++i)
            if (logits(i) > logits(best)) best = i;
        p(best) = 1.0;
        return p;
    }
    const double mx = logits.maxCoeff();
    p = ((logits.array() - mx) / temperature).exp().matrix();
    p /= p.sum();
    if (top_p >= 1.0) return p;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(v));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p(a) > p(b); });
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size()) {
        cum += p(order[keep]);
        ++keep;
        if (cum >= top_p) break;
    }
    Vector q = Vector::Zero(v);
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) total += p(order[i]);
    for (std::size_t i = 0; i < keep; ++i) q(order[i]) = p(order[i]) / total;
    return q;
}

namespace {

void check_policy(const PolicyModel& policy) {
    if (policy.net.spec.output_width() != policy.vocab_size ||
        policy.net.spec.input_width() != policy.prompt_dim + policy.response_length * policy.vocab_size)
        throw ShapeError("policy network does not match its vocabulary/length");
}

// Input column for step t: context then one-hot slots for tokens 0..t-1.
void fill_policy_input(const PolicyModel& policy, const Prompt& prompt, std::span<const int> prefix,
                       Eigen::Ref<Vector> col) {
    col.setZero();
    col.head(policy.prompt_dim) = prompt.context;
    for (std::size_t s = 0; s < prefix.size(); ++s)
        col(policy.prompt_dim + static_cast<Eigen::Index>(s) * policy.vocab_size + prefix[s]) = 1.0;
}

int draw_token(const Vector& p, Rng& rng) {
    const double u = uniform01(rng);
    double cum = 0.0;
    int last = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p(i) <= 0.0) continue;
        cum += p(i);
        last = static_cast<int>(i);
        if (u < cum) return last;
    }
    return last;
}

}  // namespace

std::vector<Sample> sample_for_prompts(const PolicyModel& policy, std::span<const Prompt> prompts,
                                       std::span<const int> prompt_of, Rng& rng) {
    check_policy(policy);
    const std::size_t n = prompt_of.size();
    std::vector<Sample> out(n);
    for (auto& s : out) s.response.tokens.reserve(static_cast<std::size_t>(policy.response_length));
    Matrix inputs(policy.net.spec.input_width(), static_cast<Eigen::Index>(n));
    for (int t = 0; t < policy.response_length; ++t) {
        for (std::size_t i = 0; i < n; ++i)
            fill_policy_input(policy, prompts[static_cast<std::size_t>(prompt_of[i])], out[i].response.tokens,
                              inputs.col(static_cast<Eigen::Index>(i)));
        const Matrix logits = nn::forward_batch(policy.net.spec, policy.net.params, inputs);
        for (std::size_t i = 0; i < n; ++i) {
            const Vector p = step_distribution(logits.col(static_cast<Eigen::Index>(i)), policy.temperature,
                                               policy.top_p);
            const int tok = draw_token(p, rng);
            out[i].response.tokens.push_back(tok);
            out[i].logprob += std::log(p(tok));
        }
    }
    return out;
}

std::vector<Sample> sample_responses(const PolicyModel& policy, const Prompt& prompt, int count, Rng& rng) {
    const std::vector<int> idx(static_cast<std::size_t>(std::max(count, 0)), 0);
    return sample_for_prompts(policy, std::span<const Prompt>(&prompt, 1), idx, rng);
}

Sample sample_response(const PolicyModel& policy, const Prompt& prompt, Rng& rng) {
    return sample_responses(policy, prompt, 1, rng).front();
}

Vector response_logprobs(const PolicyModel& policy, std::span<const Prompt> prompts, std::span<const int> prompt_of,
                         std::span<const Response> responses) {
    check_policy(policy);
    if (prompt_of.size() != responses.size()) throw ShapeError("prompt index list does not match responses");
    const auto n = static_cast<Eigen::Index>(responses.size());
    Vector lp = Vector::Zero(n);
    Matrix inputs(policy.net.spec.input_width(), n);
    for (const auto& r : responses)
        if (static_cast<int>(r.tokens.size()) != policy.response_length) throw ShapeError("response length mismatch");
    for (int t = 0; t < policy.response_length; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& toks = responses[static_cast<std::size_t>(i)].tokens;
            fill_policy_input(policy, prompts[static_cast<std::size_t>(prompt_of[static_cast<std::size_t>(i)])],
                              std::span<const int>(toks.data(), static_cast<std::size_t>(t)), inputs.col(i));
        }
        const Matrix logits = nn::forward_batch(policy.net.spec, policy.net.params, inputs);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int tok = responses[static_cast<std::size_t>(i)].tokens[static_cast<std::size_t>(t)];
            if (tok < 0 || tok >= policy.vocab_size) throw ShapeError("token outside the vocabulary");
            const Vector p = step_distribution(logits.col(i), policy.temperature, policy.top_p);
            lp(i) += p(tok) > 0.0 ? std::log(p(tok)) : kNegInf;
        }
    }
    return lp;
}

double response_logprob(const PolicyModel& policy, const Prompt& prompt, const Response& response) {
    const int zero = 0;
    return response_logprobs(policy, std::span<const Prompt>(&prompt, 1), std::span<const int>(&zero, 1),
                             std::span<const Response>(&response, 1))(0);
}

std::vector<double> all_response_logprobs(const PolicyModel& policy, const Prompt& prompt) {
    check_policy(policy);
    WorldSpec probe;
    probe.vocab_size = policy.vocab_size;
    probe.response_length = policy.response_length;
    if (!probe.enumerable()) throw EnumerationRefused("response space too large to enumerate");
    const auto V = static_cast<std::size_t>(policy.vocab_size);
    std::vector<double> level{0.0};  // log-prob of each prefix at the current depth
    std::vector<int> prefix(static_cast<std::size_t>(policy.response_length));
    for (int t = 0; t < policy.response_length; ++t) {
        const std::size_t count = level.size();
        Matrix inputs(policy.net.spec.input_width(), static_cast<Eigen::Index>(count));
        for (std::size_t k = 0; k < count; ++k) {
            std::size_t rem = k;
            for (int s = t - 1; s >= 0; --s) {
                prefix[static_cast<std::size_t>(s)] = static_cast<int>(rem % V);
                rem /= V;
            }
            fill_policy_input(policy, prompt, std::span<const int>(prefix.data(), static_cast<std::size_t>(t)),
                              inputs.col(static_cast<Eigen::Index>(k)));
        }
        const Matrix logits = nn::forward_batch(policy.net.spec, policy.net.params, inputs);
        std::vector<double> next(count * V);
        for (std::size_t k = 0; k < count; ++k) {
            const Vector p = step_distribution(logits.col(static_cast<Eigen::Index>(k)), policy.temperature,
                                               policy.top_p);
            for (std::size_t v = 0; v < V; ++v)
                next[k * V + v] = p(static_cast<Eigen::Index>(v)) > 0.0 && level[k] != kNegInf
                                      ? level[k] + std::log(p(static_cast<Eigen::Index>(v)))
                                      : kNegInf;
        }
        level = std::move(next);
    }
    return level;
}

PolicyBatchEval::PolicyBatchEval(const PolicyModel& policy, std::span<const Prompt> prompts,
                                 std::span<const int> prompt_of, std::span<const Response> responses)
    : policy_(policy) {
    check_policy(policy);
    if (policy.top_p < 1.0 || policy.temperature <= 0.0)
        throw ConfigError("policy gradients require top_p = 1 and temperature > 0");
    if (prompt_of.size() != responses.size()) throw ShapeError("prompt index list does not match responses");
    const auto n = static_cast<Eigen::Index>(responses.size());
    logprobs_ = Vector::Zero(n);
    Matrix inputs(policy.net.spec.input_width(), n);
    caches_.resize(static_cast<std::size_t>(policy.response_length));
    for (int t = 0; t < policy.response_length; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& toks = responses[static_cast<std::size_t>(i)].tokens;
            if (static_cast<int>(toks.size()) != policy.response_length) throw ShapeError("response length mismatch");
            fill_policy_input(policy, prompts[static_cast<std::size_t>(prompt_of[static_cast<std::size_t>(i)])],
                              std::span<const int>(toks.data(), static_cast<std::size_t>(t)), inputs.col(i));
        }
        const Matrix logits =
            nn::forward_batch(policy.net.spec, policy.net.params, inputs, &caches_[static_cast<std::size_t>(t)]);
        Matrix d(policy.vocab_size, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int tok = responses[static_cast<std::size_t>(i)].tokens[static_cast<std::size_t>(t)];
            if (tok < 0 || tok >= policy.vocab_size) throw ShapeError("token outside the vocabulary");
            const Vector p = step_distribution(logits.col(i), policy.temperature, 1.0);
            logprobs_(i) += std::log(p(tok));
            Vector g = -p;
            g(tok) += 1.0;
            d.col(i) = g / policy.temperature;
        }
        dlogits_.push_back(std::move(d));
    }
}

nn::ParamGradient PolicyBatchEval::gradient(std::span<const double> weights) const {
    if (static_cast<Eigen::Index>(weights.size()) != logprobs_.size()) throw ShapeError("weight count mismatch");
    const Eigen::Map<const Vector> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
    auto grad = nn::ParamGradient::zeros_like(policy_.net.params);
    for (std::size_t t = 0; t < caches_.size(); ++t) {
        const Matrix upstream = dlogits_[t] * w.asDiagonal();
        grad += nn::backward_batch(policy_.net.spec, policy_.net.params, caches_[t], upstream);
    }
    return grad;
}

LogprobGradient response_logprob_grad(const PolicyModel& policy, std::span<const Prompt> prompts,
                                      std::span<const int> prompt_of, std::span<const Response> responses,
                                      std::span<const double> weights) {
    if (weights.size() != responses.size()) throw ShapeError("prompt/response/weight lists differ in length");
    const PolicyBatchEval eval(policy, prompts, prompt_of, responses);
    return {eval.logprobs(), eval.gradient(weights)};
}

std::vector<Response> enumerate_responses(const WorldSpec& spec) {
    if (!spec.enumerable())
        throw EnumerationRefused("V^L = " + std::to_string(spec.vocab_size) + "^" +
                                 std::to_string(spec.response_length) + " exceeds the 2^20 enumeration bound");
    const std::uint64_t n = spec.response_space();
    std::vector<Response> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(response_from_index(i, spec.vocab_size, spec.response_length));
    return out;
}

GoldRewardModel normalize_gold(const GoldRewardModel& gold, const PolicyModel& policy_init,
                               std::span<const Prompt> prompts, int n_samples, Rng& rng) {
    if (n_samples < 1000) throw ConfigError("normalize_gold needs at least 1000 samples");
    if (prompts.empty()) throw ConfigError("normalize_gold needs prompts");
    GoldRewardModel raw = gold;
    raw.center = 0.0;
    double sum = 0.0;
    const int per_prompt = n_samples / static_cast<int>(prompts.size());
    const int extra = n_samples % static_cast<int>(prompts.size());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
        const int count = per_prompt + (static_cast<int>(p) < extra ? 1 : 0);
        if (count == 0) continue;
        std::vector<Response> rs;
        for (auto& s : sample_responses(policy_init, prompts[p], count, rng)) rs.push_back(std::move(s.response));
        sum += gold_scores(raw, prompts[p], rs).sum();
    }
    raw.center = sum / static_cast<double>(n_samples);
    return raw;
}

World build_world(const WorldSpec& spec) {
    spec.validate();
    World w;
    w.spec = spec;
    Rng prompt_rng = make_rng(spec.master_seed, "world.prompts");
    for (int i = 0; i < spec.n_prompts; ++i) {
        Prompt p{i, Vector(spec.prompt_dim)};
        for (int d = 0; d < spec.prompt_dim; ++d) p.context(d) = standard_normal(prompt_rng);
        w.prompts.push_back(std::move(p));
    }
    Rng embed_rng = make_rng(spec.master_seed, "world.embeddings");
    Matrix table(spec.vocab_size, spec.embed_dim);
    for (int v = 0; v < spec.vocab_size; ++v)
        for (int d = 0; d < spec.embed_dim; ++d) table(v, d) = spec.embed_scale * standard_normal(embed_rng);
    w.encoder = ResponseEncoder(std::move(table), spec.prompt_dim, spec.response_length);

    std::vector<int> gw{spec.feature_width()};
    gw.insert(gw.end(), spec.gold_hidden.begin(), spec.gold_hidden.end());
    gw.push_back(1);
    nn::NetworkSpec gold_spec(gw);
    w.gold.net = {gold_spec, nn::init_params(gold_spec, derive_seed(spec.master_seed, "world.gold"))};
    for (std::size_t l = 0; l + 1 < w.gold.net.params.layers.size(); ++l) w.gold.net.params.layers[l].weight *= spec.gold_gain;
    w.gold.encoder = w.encoder;

    std::vector<int> pw{spec.policy_input_width()};
    pw.insert(pw.end(), spec.policy_hidden.begin(), spec.policy_hidden.end());
    pw.push_back(spec.vocab_size);
    nn::NetworkSpec policy_spec(pw);
    w.policy_init.net = {policy_spec, nn::init_params(policy_spec, derive_seed(spec.master_seed, "world.policy"))};
    w.policy_init.net.params.layers.back().weight *= spec.policy_logit_scale;
    if (spec.token_prior_scale > 0.0) {
        Rng prior_rng = make_rng(spec.master_seed, "world.token_prior");
        Vector& bias = w.policy_init.net.params.layers.back().bias;
        for (int v = 0; v < spec.vocab_size; ++v) bias(v) = spec.token_prior_scale * standard_normal(prior_rng);
    }
    w.policy_init.vocab_size = spec.vocab_size;
    w.policy_init.response_length = spec.response_length;
    w.policy_init.prompt_dim = spec.prompt_dim;

    if (spec.normalize_samples > 0) {
        Rng rng = make_rng(spec.master_seed, "world.normalize");
        w.gold = normalize_gold(w.gold, w.policy_init, w.prompts, spec.normalize_samples, rng);
    }
    return w;
}

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

namespace {

constexpr const char* kWorldMagic = "RMLAB-WORLD 1";

void write_matrix(std::ostream& os, const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            auto bits = std::bit_cast<std::uint64_t>(m(r, c));
            for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
}

void read_matrix(std::istream& is, Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            unsigned char b[8];
            is.read(reinterpret_cast<char*>(b), 8);
            if (!is) throw FormatError("world checkpoint truncated");
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
            m(r, c) = std::bit_cast<double>(bits);
        }
}

}  // namespace

void write_world(std::ostream& os, const World& world) {
    nlohmann::json header;
    header["spec"] = world.spec;
    header["gold_center_bits"] = hex64(std::bit_cast<std::uint64_t>(world.gold.center));
    header["policy_temperature"] = world.policy_init.temperature;
    header["policy_top_p"] = world.policy_init.top_p;
    os << kWorldMagic << '\n' << header.dump() << '\n';
    write_matrix(os, world.encoder.embeddings());
    Matrix prompts(world.spec.n_prompts, world.spec.prompt_dim);
    for (int i = 0; i < world.spec.n_prompts; ++i) prompts.row(i) = world.prompts[static_cast<std::size_t>(i)].context;
    write_matrix(os, prompts);
    nn::write_checkpoint(os, world.gold.net);
    nn::write_checkpoint(os, world.policy_init.net);
}

World read_world(std::istream& is) {
    std::string magic, line;
    std::getline(is, magic);
    if (magic != kWorldMagic) throw FormatError("not a world checkpoint");
    std::getline(is, line);
    const auto header = nlohmann::json::parse(line);
    World w;
    w.spec = header.at("spec").get<WorldSpec>();
    w.spec.validate();
    Matrix table(w.spec.vocab_size, w.spec.embed_dim);
    read_matrix(is, table);
    Matrix prompts(w.spec.n_prompts, w.spec.prompt_dim);
    read_matrix(is, prompts);
    for (int i = 0; i < w.spec.n_prompts; ++i) w.prompts.push_back({i, prompts.row(i).transpose()});
    w.encoder = ResponseEncoder(std::move(table), w.spec.prompt_dim, w.spec.response_length);
    w.gold.net = nn::read_checkpoint(is);
    w.gold.encoder = w.encoder;
    w.gold.center = std::bit_cast<double>(std::stoull(header.at("gold_center_bits").get<std::string>(), nullptr, 16));
    w.policy_init.net = nn::read_checkpoint(is);
    w.policy_init.vocab_size = w.spec.vocab_size;
    w.policy_init.response_length = w.spec.response_length;
    w.policy_init.prompt_dim = w.spec.prompt_dim;
    w.policy_init.temperature = header.at("policy_temperature").get<double>();
    w.policy_init.top_p = header.at("policy_top_p").get<double>();
    return w;
}

std::string World::hash() const {
    std::ostringstream os(std::ios::binary);
    write_world(os, *this);
    return hex64(fnv1a64(os.str()));
}

void save_world(const std::filesystem::path& path, const World& world) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    write_world(os, world);
}

World load_world(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read " + path.string());
    return read_world(is);
}

}  // namespace rmlab
