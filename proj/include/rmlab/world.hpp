#pragma once

// The synthetic stand-in for prompts, responses, a frozen gold scorer and an
// autoregressive token policy.

#include "rmlab/nn.hpp"
#include "rmlab/rng.hpp"

#include <json.hpp>

#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rmlab {

using nn::Matrix;
using nn::Vector;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr std::uint64_t kMaxEnumerable = std::uint64_t{1} << 20;

struct WorldSpec {
    int vocab_size = 16;
    int response_length = 4;
    int embed_dim = 8;
    int prompt_dim = 8;
    int n_prompts = 32;
    std::uint64_t master_seed = 0;
    std::vector<int> gold_hidden{256, 256};
    std::vector<int> policy_hidden{32};
    /// Multiplies the standard-normal token embeddings.
    double embed_scale = 1.0;
    /// Multiplies the initial policy's output-layer weights (sharpness of pi_init).
    double policy_logit_scale = 1.0;
    /// Multiplies every gold weight matrix after initialization (ruggedness of the gold landscape).
    double gold_gain = 1.0;
    /// Spread of a fixed per-token logit offset in pi_init (a unigram-frequency prior).
    double token_prior_scale = 0.0;
    /// Monte Carlo samples used to center the gold scorer (0 disables centering).
    int normalize_samples = 10000;

    void validate() const;
    std::uint64_t response_space() const;  // V^L, saturating at UINT64_MAX
    bool enumerable() const { return response_space() <= kMaxEnumerable; }
    int feature_width() const { return prompt_dim + response_length * embed_dim; }
    int policy_input_width() const { return prompt_dim + response_length * vocab_size; }

    bool operator==(const WorldSpec&) const = default;
};

void to_json(nlohmann::json& j, const WorldSpec& s);
/// Strict: unknown keys raise ConfigError; missing keys keep their defaults.
void from_json(const nlohmann::json& j, WorldSpec& s);

struct Prompt {
    int id = 0;
    Vector context;
};

struct Response {
    std::vector<int> tokens;

    auto operator<=>(const Response&) const = default;
    bool operator==(const Response&) const = default;
};

/// Lexicographic index of a response (first token most significant).
std::uint64_t response_index(const Response& r, int vocab_size);
Response response_from_index(std::uint64_t index, int vocab_size, int length);

/// Maps (prompt, response) to the reward-model input: context followed by the
/// embedding of each token in position order. Shared by gold and proxies.
class ResponseEncoder {
public:
    ResponseEncoder() = default;
    ResponseEncoder(Matrix embeddings, int prompt_dim, int response_length);

    int width() const { return prompt_dim_ + length_ * static_cast<int>(table_.cols()); }
    int vocab_size() const { return static_cast<int>(table_.rows()); }
    int response_length() const { return length_; }
    const Matrix& embeddings() const { return table_; }

    Matrix encode(const Prompt& prompt, std::span<const Response> responses) const;
    /// Column i encodes (prompts[prompt_of[i]], responses[i]).
    Matrix encode(std::span<const Prompt> prompts, std::span<const int> prompt_of,
                  std::span<const Response> responses) const;
    void check(const Response& r) const;

    bool operator==(const ResponseEncoder&) const = default;

private:
    Matrix table_;  // V x embed_dim
    int prompt_dim_ = 0;
    int length_ = 0;
};

struct GoldRewardModel {
    nn::Network net;
    ResponseEncoder encoder;
    double center = 0.0;
};

double gold_score(const GoldRewardModel& gold, const Prompt& prompt, const Response& response);
Vector gold_scores(const GoldRewardModel& gold, const Prompt& prompt, std::span<const Response> responses);

struct PolicyModel {
    nn::Network net;
    int vocab_size = 0;
    int response_length = 0;
    int prompt_dim = 0;
    /// 0 selects argmax (greedy) decoding.
    double temperature = 1.0;
    double top_p = 1.0;

    /// Same network with different decoding settings.
    PolicyModel with_decoding(double temperature, double top_p) const;
};

/// Per-step sampling distribution from raw logits: temperature scaling, then
/// nucleus truncation and renormalization. Tokens outside the nucleus get 0.
Vector step_distribution(const Vector& logits, double temperature, double top_p);

struct Sample {
    Response response;
    double logprob = 0.0;
};

Sample sample_response(const PolicyModel& policy, const Prompt& prompt, Rng& rng);
/// `count` independent samples for one prompt, drawn as a batch.
std::vector<Sample> sample_responses(const PolicyModel& policy, const Prompt& prompt, int count, Rng& rng);
/// One sample per listed prompt (prompt_of[i] indexes `prompts`).
std::vector<Sample> sample_for_prompts(const PolicyModel& policy, std::span<const Prompt> prompts,
                                       std::span<const int> prompt_of, Rng& rng);

/// Sum of log sampling probabilities; kNegInf when a token lies outside the nucleus.
double response_logprob(const PolicyModel& policy, const Prompt& prompt, const Response& response);
Vector response_logprobs(const PolicyModel& policy, std::span<const Prompt> prompts, std::span<const int> prompt_of,
                         std::span<const Response> responses);

/// Log-probability of every response in lexicographic order (enumerable worlds only).
std::vector<double> all_response_logprobs(const PolicyModel& policy, const Prompt& prompt);

/// Caches the per-step forward passes of a batch so log-probabilities and
/// any weighted gradient can be read without recomputing. Requires top_p == 1
/// and temperature > 0.
class PolicyBatchEval {
public:
    PolicyBatchEval(const PolicyModel& policy, std::span<const Prompt> prompts, std::span<const int> prompt_of,
                    std::span<const Response> responses);

    const Vector& logprobs() const { return logprobs_; }
    /// Gradient of sum_i weights[i] * logprob_i w.r.t. the policy parameters.
    nn::ParamGradient gradient(std::span<const double> weights) const;

private:
    const PolicyModel& policy_;
    std::vector<nn::ForwardCache> caches_;
    std::vector<Matrix> dlogits_;  // (onehot - p) / temperature per step, V x n
    Vector logprobs_;
};

struct LogprobGradient {
    Vector logprobs;
    nn::ParamGradient grad;  // gradient of sum_i weight_i * logprob_i
};

/// Log-probabilities and the weighted gradient through the policy network.
/// Requires top_p == 1 and temperature > 0 (the distribution is then smooth).
LogprobGradient response_logprob_grad(const PolicyModel& policy, std::span<const Prompt> prompts,
                                      std::span<const int> prompt_of, std::span<const Response> responses,
                                      std::span<const double> weights);

std::vector<Response> enumerate_responses(const WorldSpec& spec);

struct World {
    WorldSpec spec;
    std::vector<Prompt> prompts;
    ResponseEncoder encoder;
    GoldRewardModel gold;
    PolicyModel policy_init;

    /// Hex FNV-1a hash of the serialized world checkpoint.
    std::string hash() const;
};

World build_world(const WorldSpec& spec);

/// Returns a copy of `gold` whose center is the mean raw gold score of
/// n_samples draws from `policy_init`, cycling through the prompts.
GoldRewardModel normalize_gold(const GoldRewardModel& gold, const PolicyModel& policy_init,
                               std::span<const Prompt> prompts, int n_samples, Rng& rng);

void write_world(std::ostream& os, const World& world);
World read_world(std::istream& is);
void save_world(const std::filesystem::path& path, const World& world);
World load_world(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace rmlab
