#pragma once

// Preference pairs sampled from the initial policy, labeled by the gold
// scorer, with an exact-count label-noise injector.

#include "rmlab/world.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rmlab {

enum class Label { A, B };

inline Label other(Label l) { return l == Label::A ? Label::B : Label::A; }

struct PreferencePair {
    int prompt_id = 0;
    Response response_a;
    Response response_b;
    double gold_a = 0.0;
    double gold_b = 0.0;
    Label label = Label::A;
    bool flipped = false;

    const Response& chosen() const { return label == Label::A ? response_a : response_b; }
    const Response& rejected() const { return label == Label::A ? response_b : response_a; }
    bool operator==(const PreferencePair&) const = default;
};

struct PreferenceDataset {
    std::vector<PreferencePair> pairs;
    double noise_rate = 0.0;
    std::uint64_t generation_seed = 0;
    std::uint64_t noise_seed = 0;
    std::string world_hash;

    std::size_t flipped_count() const;
    bool operator==(const PreferenceDataset&) const = default;
};

struct GenConfig {
    double temperature = 1.0;
    double top_p = 0.9;
    int max_resample = 100;
};

struct GeneratedPairs {
    std::vector<PreferencePair> pairs;
    /// Pairs accepted with identical responses after max_resample retries.
    int collision_warnings = 0;
};

GeneratedPairs generate_pairs(const PolicyModel& policy_init, std::span<const Prompt> prompts, int pairs_per_prompt,
                              const GenConfig& config, Rng& rng);

/// Fills gold scores; label is the strictly higher score, ties go to A.
void label_with_gold(const GoldRewardModel& gold, std::span<const Prompt> prompts, std::vector<PreferencePair>& pairs);

/// Indices of exactly round(rate * n) pairs picked by a seeded shuffle.
std::vector<std::size_t> select_noise_indices(std::size_t n, double rate, Rng& rng);

/// Inverts the label and toggles the flipped flag of each listed pair.
void apply_flips(std::vector<PreferencePair>& pairs, std::span<const std::size_t> indices);

PreferenceDataset inject_noise(const PreferenceDataset& dataset, double noise_rate, Rng& rng);

struct DatasetSplit {
    PreferenceDataset train;
    PreferenceDataset validation;
};

/// Seeded shuffle, then floor(val_fraction * n) pairs go to validation.
DatasetSplit split_dataset(const PreferenceDataset& dataset, double val_fraction, Rng& rng);

void write_dataset(std::ostream& os, const PreferenceDataset& dataset);
PreferenceDataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const PreferenceDataset& dataset);
PreferenceDataset load_dataset(const std::filesystem::path& path);

}  // namespace rmlab
