#pragma once

// Proxy reward models fit on pairwise preferences, and ensembles of them.

#include "rmlab/prefs.hpp"
#include "rmlab/world.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rmlab {

/// -log sigmoid(chosen - rejected), evaluated as softplus(rejected - chosen).
double bt_loss(double r_chosen, double r_rejected);
/// d bt_loss / d r_chosen (the derivative w.r.t. r_rejected is its negation).
double bt_loss_grad(double r_chosen, double r_rejected);

struct RmHyper {
    std::vector<int> hidden{16};
    nn::Activation activation = nn::Activation::tanh;
    int epochs = 5;
    double learning_rate = 1e-2;
    int batch_size = 32;
    nn::Algorithm algorithm = nn::Algorithm::adam;
    /// Shift each trained member so its mean score over the training responses is 0.
    bool center = true;

    bool operator==(const RmHyper&) const = default;
};

void to_json(nlohmann::json& j, const RmHyper& h);
void from_json(const nlohmann::json& j, RmHyper& h);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct ProxyRewardModel {
    nn::Network net;
    std::uint64_t head_seed = 0;
    std::uint64_t shuffle_seed = 0;
    int epochs = 0;
    double val_accuracy = 0.0;
    double val_loss = 0.0;
    /// Amount subtracted from the head bias by center_reward_model.
    double center_offset = 0.0;
    std::vector<EpochMetrics> history;
};

/// Everything needed to turn pair records into reward-model inputs.
struct ScoringContext {
    const ResponseEncoder* encoder = nullptr;
    std::span<const Prompt> prompts;
};

/// Shared starting network: input width from the encoder, hidden widths from
/// the hyperparameters, scalar output.
nn::Network make_trunk_init(const ResponseEncoder& encoder, const RmHyper& hyper, std::uint64_t seed);

/// Replaces the final (scalar head) layer with a fresh draw from head_seed.
nn::Network with_fresh_head(const nn::Network& trunk_init, std::uint64_t head_seed);

Vector rm_scores(const nn::Network& net, const ScoringContext& ctx, const Prompt& prompt,
                 std::span<const Response> responses);

/// Mean bt_loss of a batch and its gradient w.r.t. the network parameters.
struct PairLoss {
    double loss = 0.0;
    nn::ParamGradient grad;
};
PairLoss pair_loss_and_grad(const nn::Network& net, const Matrix& chosen_features, const Matrix& rejected_features);

struct Validation {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Accuracy counts ties as 0.5; loss is the mean bt_loss against the labels.
Validation validate_rm(const nn::Network& net, const ScoringContext& ctx, std::span<const PreferencePair> pairs);

ProxyRewardModel train_rm(const nn::Network& trunk_init, std::uint64_t head_seed, const PreferenceDataset& train,
                          const PreferenceDataset& validation, const RmHyper& hyper, std::uint64_t shuffle_seed,
                          const ScoringContext& ctx);

/// Subtracts the mean score over every response in `data` from the head bias.
/// Pairwise accuracy and loss are unchanged.
void center_reward_model(ProxyRewardModel& model, const ScoringContext& ctx, const PreferenceDataset& data);

struct RewardEnsemble {
    std::vector<ProxyRewardModel> members;
    std::string trunk_hash;
    std::uint64_t base_seed = 0;

    std::size_t k() const { return members.size(); }
};

/// Member i uses head_seed = base_seed + i and shuffle_seed = base_seed + 1000 + i.
/// Members are centered on the training set when hyper.center is set.
RewardEnsemble train_ensemble(int k, const nn::Network& trunk_init, const PreferenceDataset& train,
                              const PreferenceDataset& validation, const RmHyper& hyper, std::uint64_t base_seed,
                              const ScoringContext& ctx);

/// k x n member scores.
Matrix member_scores(const RewardEnsemble& ensemble, const ResponseEncoder& encoder, std::span<const Prompt> prompts,
                     std::span<const int> prompt_of, std::span<const Response> responses);

std::string network_hash(const nn::Network& net);

/// Writes member_<i>.ckpt files and a manifest.json into `dir`.
void save_ensemble(const std::filesystem::path& dir, const RewardEnsemble& ensemble);
RewardEnsemble load_ensemble(const std::filesystem::path& dir);

}  // namespace rmlab
