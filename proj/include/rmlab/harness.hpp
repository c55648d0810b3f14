#pragma once

// Experiment configuration, cell execution, sweeps, win-rates and the
// on-disk run layout.

#include "rmlab/bon.hpp"
#include "rmlab/ppo.hpp"
#include "rmlab/reward_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace rmlab {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "RMLAB_OUTPUT_ROOT";

struct DataConfig {
    int pairs_per_prompt = 64;
    double noise_rate = 0.25;
    double val_fraction = 0.1;
    GenConfig generation;

    bool operator==(const DataConfig&) const = default;
};

/// Which combiners a cell optimizes. `single` expands to one entry per member.
struct CombinerGrid {
    bool single = true;
    bool mean = true;
    bool wco = true;
    std::vector<double> uwo_lambdas{0.5};

    std::vector<CombinerConfig> expand(int k) const;
    bool operator==(const CombinerGrid&) const = default;
};

enum class OptimizerKind { bon, ppo };
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::bon;
    BonConfig bon;
    PpoConfig ppo;
};

/// Axes of a sweep; an empty axis keeps the base configuration's value.
struct SweepAxes {
    std::vector<int> k;
    std::vector<std::vector<int>> rm_hidden;
    std::vector<int> pairs_per_prompt;
    std::vector<double> noise_rate;
    std::vector<double> beta;

    bool empty() const;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string name = "experiment";
    WorldSpec world;
    DataConfig data;
    RmHyper reward_model;
    int ensemble_k = 5;
    CombinerGrid combiners;
    OptimizerConfig optimizer;
    SweepAxes sweep;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string output_dir = "rmlab-out";

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Strict: unknown keys and schema-version mismatches raise ConfigError.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

/// One fully resolved point of the sweep grid (sweep axes cleared).
struct Cell {
    ExperimentConfig config;
    std::string hash;
};

/// Canonical JSON of everything that determines a cell's results.
nlohmann::json cell_identity(const ExperimentConfig& resolved);
std::string cell_hash(const ExperimentConfig& resolved);
/// Cartesian product of the sweep axes in a fixed order (k, rm_hidden,
/// pairs_per_prompt, noise_rate, beta).
std::vector<Cell> expand_cells(const ExperimentConfig& config);

enum class RunStatus { ok, failed, skipped };
std::string to_string(RunStatus s);

/// One optimization run: a (cell, seed, combiner) triple.
struct RunRecord {
    std::string cell_hash;
    std::uint64_t seed = 0;
    CombinerConfig combiner;
    std::string optimizer;
    int k = 0;
    std::vector<int> rm_hidden;
    int pairs = 0;
    double noise_rate = 0.0;
    double beta = 0.0;
    std::string curve_path;  // relative to the output root
    double final_kl = 0.0;
    double final_proxy = 0.0;
    double final_gold = 0.0;
    double wall_seconds = 0.0;
    RunStatus status = RunStatus::ok;
    std::string failed_stage;
    std::string message;
};

struct CellResult {
    std::string cell_hash;
    std::uint64_t seed = 0;
    RunStatus status = RunStatus::ok;
    std::string failed_stage;
    std::string message;
    std::string world_hash;
    std::vector<RunRecord> records;
    bool reused = false;  // an earlier completed run was found on disk
};

/// Thread-safe memo of built worlds keyed by their specification.
class WorldCache {
public:
    std::shared_ptr<const World> get(const WorldSpec& spec);

private:
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const World>> worlds_;
};

/// Test hook: called with the stage name before each stage starts; may throw
/// to simulate a failure.
using StageHook = std::function<void(const std::string& stage)>;

struct RunOptions {
    std::filesystem::path output_root;
    WorldCache* worlds = nullptr;
    StageHook stage_hook;
};

/// Stages of the cell pipeline, seeded from the experiment seed alone so that
/// cells differing only in optimizer settings share data and reward models.
PreferenceDataset build_dataset(const World& world, const ExperimentConfig& config, std::uint64_t seed);
DatasetSplit split_for_training(const PreferenceDataset& dataset, const ExperimentConfig& config, std::uint64_t seed);
RewardEnsemble build_ensemble(const World& world, const ExperimentConfig& config, const DatasetSplit& split,
                              std::uint64_t seed);

std::filesystem::path cell_dir(const std::filesystem::path& root, const std::string& hash, std::uint64_t seed);

/// World -> preferences -> noise -> ensemble -> optimization per combiner ->
/// curves. A completed (hash, seed) directory is reused without recomputing.
CellResult run_cell(const Cell& cell, std::uint64_t seed, const RunOptions& options);

struct SweepResult {
    std::vector<CellResult> cells;
    std::filesystem::path summary_path;
    bool all_ok() const;
};

/// Runs every cell x seed with up to `parallelism` worker threads and writes
/// summary.csv under the output root. Results are ordered by (cell, seed).
/// A non-empty `only_cell` restricts the sweep to the cell with that hash.
SweepResult run_sweep(const ExperimentConfig& config, int parallelism, const std::filesystem::path& output_root,
                      const StageHook& hook = {}, const std::string& only_cell = {});

/// Columns: cell_hash,seed,optimizer,combiner,mode,lambda,member_index,k,rm_hidden,pairs,noise_rate,beta,
/// status,stage,final_kl,final_proxy,final_gold,curve_path
void write_summary_csv(std::ostream& os, const std::vector<CellResult>& cells);
std::vector<RunRecord> read_summary_csv(std::istream& is);

/// Per-prompt gold scores of one method's final answers.
struct PromptScores {
    std::vector<int> prompt_ids;
    std::vector<double> gold;
};

PromptScores read_prompt_scores(const std::filesystem::path& path);
void write_prompt_scores(std::ostream& os, const PromptScores& s);

/// Mean over prompts of 1 / 0.5 / 0 (a above / tied with / below b), times
/// 100. Throws ShapeError when the prompt lists differ.
double winrate(const PromptScores& a, const PromptScores& b);

/// Reads `--out`, then the environment variable, then the config's output_dir.
std::filesystem::path resolve_output_root(const std::optional<std::string>& cli_out, const ExperimentConfig& config);

}  // namespace rmlab
