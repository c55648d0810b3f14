#include "rmlab/harness.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/format.hpp"
#include "rmlab/json_util.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace rmlab {

namespace fs = std::filesystem;

std::vector<CombinerConfig> CombinerGrid::expand(int k) const {
    std::vector<CombinerConfig> out;
    if (single)
        for (int i = 0; i < k; ++i) out.push_back({CombinerMode::single, 0.5, i});
    if (mean) out.push_back({CombinerMode::mean, 0.5, 0});
    if (wco) out.push_back({CombinerMode::wco, 0.5, 0});
    for (double l : uwo_lambdas) out.push_back({CombinerMode::uwo, l, 0});
    return out;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::bon ? "bon" : "ppo"; }

std::string to_string(RunStatus s) {
    switch (s) {
        case RunStatus::ok: return "ok";
        case RunStatus::failed: return "failed";
        case RunStatus::skipped: return "skipped";
    }
    return "?";
}

namespace {

OptimizerKind optimizer_kind_from(const std::string& s) {
    if (s == "bon") return OptimizerKind::bon;
    if (s == "ppo") return OptimizerKind::ppo;
    throw ConfigError("unknown optimizer kind '" + s + "'");
}

RunStatus run_status_from(const std::string& s) {
    if (s == "ok") return RunStatus::ok;
    if (s == "failed") return RunStatus::failed;
    if (s == "skipped") return RunStatus::skipped;
    throw FormatError("unknown run status '" + s + "'");
}

nlohmann::json data_json(const DataConfig& d) {
    return {{"pairs_per_prompt", d.pairs_per_prompt},
            {"noise_rate", d.noise_rate},
            {"val_fraction", d.val_fraction},
            {"top_p", d.generation.top_p},
            {"temperature", d.generation.temperature},
            {"max_resample", d.generation.max_resample}};
}

void read_data(const nlohmann::json& j, DataConfig& d) {
    json_util::Reader r(j, "data");
    r.get("pairs_per_prompt", d.pairs_per_prompt);
    r.get("noise_rate", d.noise_rate);
    r.get("val_fraction", d.val_fraction);
    r.get("top_p", d.generation.top_p);
    r.get("temperature", d.generation.temperature);
    r.get("max_resample", d.generation.max_resample);
    r.finish();
}

nlohmann::json optimizer_json(const OptimizerConfig& o, bool active_only) {
    nlohmann::json j{{"kind", to_string(o.kind)}};
    if (!active_only || o.kind == OptimizerKind::bon) j["bon"] = o.bon;
    if (!active_only || o.kind == OptimizerKind::ppo) j["ppo"] = o.ppo;
    return j;
}

void check_finite_rate(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

void check_hidden(const std::vector<int>& h) {
    for (int w : h)
        if (w < 1) throw ConfigError("reward_model: hidden widths must be >= 1");
}

}  // namespace

bool SweepAxes::empty() const {
    return k.empty() && rm_hidden.empty() && pairs_per_prompt.empty() && noise_rate.empty() && beta.empty();
}

void ExperimentConfig::validate() const {
    if (schema_version != kSchemaVersion)
        throw ConfigError("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
    world.validate();
    if (data.pairs_per_prompt < 1) throw ConfigError("data: pairs_per_prompt must be >= 1");
    check_finite_rate(data.noise_rate, "data: noise_rate");
    if (!(data.val_fraction > 0.0 && data.val_fraction < 0.5))
        throw ConfigError("data: val_fraction must lie in (0, 0.5)");
    if (!(data.generation.top_p > 0.0 && data.generation.top_p <= 1.0))
        throw ConfigError("data: top_p must lie in (0, 1]");
    if (!(data.generation.temperature > 0.0)) throw ConfigError("data: temperature must be > 0");
    check_hidden(reward_model.hidden);
    if (ensemble_k < 1) throw ConfigError("ensemble_k must be >= 1");
    if (!combiners.single && !combiners.mean && !combiners.wco && combiners.uwo_lambdas.empty())
        throw ConfigError("combiners: the grid is empty");
    for (double l : combiners.uwo_lambdas)
        if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("combiners: uwo lambdas must be finite and >= 0");
    optimizer.bon.validate();
    optimizer.ppo.validate();
    for (int k : sweep.k)
        if (k < 1) throw ConfigError("sweep.k: values must be >= 1");
    for (const auto& h : sweep.rm_hidden) check_hidden(h);
    for (int p : sweep.pairs_per_prompt)
        if (p < 1) throw ConfigError("sweep.pairs_per_prompt: values must be >= 1");
    for (double n : sweep.noise_rate) check_finite_rate(n, "sweep.noise_rate");
    for (double b : sweep.beta)
        if (!(b >= 0.0)) throw ConfigError("sweep.beta: values must be >= 0");
    if (!sweep.beta.empty() && optimizer.kind != OptimizerKind::ppo)
        throw ConfigError("sweep.beta requires the ppo optimizer");
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json sweep = nlohmann::json::object();
    if (!c.sweep.k.empty()) sweep["k"] = c.sweep.k;
    if (!c.sweep.rm_hidden.empty()) sweep["rm_hidden"] = c.sweep.rm_hidden;
    if (!c.sweep.pairs_per_prompt.empty()) sweep["pairs_per_prompt"] = c.sweep.pairs_per_prompt;
    if (!c.sweep.noise_rate.empty()) sweep["noise_rate"] = c.sweep.noise_rate;
    if (!c.sweep.beta.empty()) sweep["beta"] = c.sweep.beta;
    j = nlohmann::json{{"schema_version", c.schema_version},
                       {"name", c.name},
                       {"world", c.world},
                       {"data", data_json(c.data)},
                       {"reward_model", c.reward_model},
                       {"ensemble_k", c.ensemble_k},
                       {"combiners",
                        {{"single", c.combiners.single},
                         {"mean", c.combiners.mean},
                         {"wco", c.combiners.wco},
                         {"uwo_lambdas", c.combiners.uwo_lambdas}}},
                       {"optimizer", optimizer_json(c.optimizer, false)},
                       {"sweep", sweep},
                       {"seeds", c.seeds},
                       {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    json_util::Reader r(j, "config");
    r.require("schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion)
        throw ConfigError("schema_version " + std::to_string(c.schema_version) + " is not supported (expected " +
                          std::to_string(kSchemaVersion) + ")");
    r.get("name", c.name);
    if (auto* w = r.child("world")) c.world = w->get<WorldSpec>();
    if (auto* d = r.child("data")) read_data(*d, c.data);
    if (auto* m = r.child("reward_model")) c.reward_model = m->get<RmHyper>();
    r.get("ensemble_k", c.ensemble_k);
    if (auto* cg = r.child("combiners")) {
        json_util::Reader g(*cg, "combiners");
        g.get("single", c.combiners.single);
        g.get("mean", c.combiners.mean);
        g.get("wco", c.combiners.wco);
        g.get("uwo_lambdas", c.combiners.uwo_lambdas);
        g.finish();
    }
    if (auto* o = r.child("optimizer")) {
        json_util::Reader g(*o, "optimizer");
        std::string kind = to_string(c.optimizer.kind);
        if (g.get("kind", kind)) c.optimizer.kind = optimizer_kind_from(kind);
        if (auto* b = g.child("bon")) c.optimizer.bon = b->get<BonConfig>();
        if (auto* p = g.child("ppo")) c.optimizer.ppo = p->get<PpoConfig>();
        g.finish();
    }
    if (auto* s = r.child("sweep")) {
        json_util::Reader g(*s, "sweep");
        g.get("k", c.sweep.k);
        g.get("rm_hidden", c.sweep.rm_hidden);
        g.get("pairs_per_prompt", c.sweep.pairs_per_prompt);
        g.get("noise_rate", c.sweep.noise_rate);
        g.get("beta", c.sweep.beta);
        g.finish();
    }
    r.get("seeds", c.seeds);
    r.get("output_dir", c.output_dir);
    r.finish();
    c.validate();
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return j.get<ExperimentConfig>();
}

void save_config(const fs::path& path, const ExperimentConfig& c) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write config " + path.string());
    f << nlohmann::json(c).dump(2) << '\n';
}

nlohmann::json cell_identity(const ExperimentConfig& c) {
    return {{"schema_version", c.schema_version},
            {"world", c.world},
            {"data", data_json(c.data)},
            {"reward_model", c.reward_model},
            {"ensemble_k", c.ensemble_k},
            {"combiners",
             {{"single", c.combiners.single},
              {"mean", c.combiners.mean},
              {"wco", c.combiners.wco},
              {"uwo_lambdas", c.combiners.uwo_lambdas}}},
            {"optimizer", optimizer_json(c.optimizer, true)}};
}

std::string cell_hash(const ExperimentConfig& resolved) { return hex64(fnv1a64(cell_identity(resolved).dump())); }

std::vector<Cell> expand_cells(const ExperimentConfig& config) {
    config.validate();
    ExperimentConfig base = config;
    base.sweep = {};
    const auto& s = config.sweep;
    const std::vector<int> ks = s.k.empty() ? std::vector<int>{config.ensemble_k} : s.k;
    const auto hs = s.rm_hidden.empty() ? std::vector<std::vector<int>>{config.reward_model.hidden} : s.rm_hidden;
    const auto ps = s.pairs_per_prompt.empty() ? std::vector<int>{config.data.pairs_per_prompt} : s.pairs_per_prompt;
    const auto ns = s.noise_rate.empty() ? std::vector<double>{config.data.noise_rate} : s.noise_rate;
    const auto bs = s.beta.empty() ? std::vector<double>{config.optimizer.ppo.beta} : s.beta;
    std::vector<Cell> out;
    for (int k : ks)
        for (const auto& h : hs)
            for (int p : ps)
                for (double n : ns)
                    for (double b : bs) {
                        Cell cell;
                        cell.config = base;
                        cell.config.ensemble_k = k;
                        cell.config.reward_model.hidden = h;
                        cell.config.data.pairs_per_prompt = p;
                        cell.config.data.noise_rate = n;
                        cell.config.optimizer.ppo.beta = b;
                        cell.hash = cell_hash(cell.config);
                        out.push_back(std::move(cell));
                    }
    return out;
}

std::shared_ptr<const World> WorldCache::get(const WorldSpec& spec) {
    const std::string key = nlohmann::json(spec).dump();
    std::lock_guard lock(mu_);
    auto it = worlds_.find(key);
    if (it != worlds_.end()) return it->second;
    auto w = std::make_shared<const World>(build_world(spec));
    worlds_.emplace(key, w);
    return w;
}

PreferenceDataset build_dataset(const World& world, const ExperimentConfig& cfg, std::uint64_t seed) {
    Rng gen_rng = make_rng(seed, "data.generate");
    GeneratedPairs gen =
        generate_pairs(world.policy_init, world.prompts, cfg.data.pairs_per_prompt, cfg.data.generation, gen_rng);
    label_with_gold(world.gold, world.prompts, gen.pairs);
    PreferenceDataset clean;
    clean.pairs = std::move(gen.pairs);
    clean.generation_seed = derive_seed(seed, "data.generate");
    clean.world_hash = world.hash();
    Rng noise_rng = make_rng(seed, "data.noise");
    PreferenceDataset noisy = inject_noise(clean, cfg.data.noise_rate, noise_rng);
    noisy.noise_seed = derive_seed(seed, "data.noise");
    return noisy;
}

DatasetSplit split_for_training(const PreferenceDataset& dataset, const ExperimentConfig& cfg, std::uint64_t seed) {
    Rng split_rng = make_rng(seed, "data.split");
    return split_dataset(dataset, cfg.data.val_fraction, split_rng);
}

RewardEnsemble build_ensemble(const World& world, const ExperimentConfig& cfg, const DatasetSplit& split,
                              std::uint64_t seed) {
    const ScoringContext ctx{&world.encoder, world.prompts};
    const nn::Network trunk = make_trunk_init(world.encoder, cfg.reward_model, derive_seed(seed, "rm.trunk"));
    return train_ensemble(cfg.ensemble_k, trunk, split.train, split.validation, cfg.reward_model,
                          derive_seed(seed, "rm.ensemble"), ctx);
}

fs::path cell_dir(const fs::path& root, const std::string& hash, std::uint64_t seed) {
    return root / "runs" / hash / std::to_string(seed);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path.string());
    f << text;
    if (!f) throw FormatError("short write to " + path.string());
}

nlohmann::json record_json(const RunRecord& r) {
    return {{"combiner", r.combiner},
            {"optimizer", r.optimizer},
            {"curve_path", r.curve_path},
            {"final_kl", r.final_kl},
            {"final_proxy", r.final_proxy},
            {"final_gold", r.final_gold},
            {"wall_seconds", r.wall_seconds},
            {"status", to_string(r.status)},
            {"stage", r.failed_stage},
            {"message", r.message}};
}

/// Fields shared by every record of a cell.
RunRecord base_record(const Cell& cell, std::uint64_t seed) {
    RunRecord r;
    r.cell_hash = cell.hash;
    r.seed = seed;
    r.optimizer = to_string(cell.config.optimizer.kind);
    r.k = cell.config.ensemble_k;
    r.rm_hidden = cell.config.reward_model.hidden;
    r.pairs = cell.config.data.pairs_per_prompt * cell.config.world.n_prompts;
    r.noise_rate = cell.config.data.noise_rate;
    r.beta = cell.config.optimizer.kind == OptimizerKind::ppo ? cell.config.optimizer.ppo.beta : 0.0;
    return r;
}

std::optional<CellResult> load_completed(const Cell& cell, std::uint64_t seed, const fs::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) return std::nullopt;
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
    if (m.value("status", "") != "ok" || m.value("cell_hash", "") != cell.hash) return std::nullopt;
    CellResult res;
    res.cell_hash = cell.hash;
    res.seed = seed;
    res.world_hash = m.at("world_hash").get<std::string>();
    res.reused = true;
    for (const auto& j : m.at("records")) {
        RunRecord r = base_record(cell, seed);
        r.combiner = j.at("combiner").get<CombinerConfig>();
        r.curve_path = j.at("curve_path").get<std::string>();
        r.final_kl = j.at("final_kl").get<double>();
        r.final_proxy = j.at("final_proxy").get<double>();
        r.final_gold = j.at("final_gold").get<double>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.status = run_status_from(j.at("status").get<std::string>());
        r.failed_stage = j.at("stage").get<std::string>();
        r.message = j.at("message").get<std::string>();
        res.records.push_back(std::move(r));
    }
    return res;
}

std::string rel_path(const std::string& hash, std::uint64_t seed, const std::string& file) {
    return (fs::path("runs") / hash / std::to_string(seed) / file).generic_string();
}

PromptScores greedy_scores(const World& world, const PolicyModel& policy) {
    const PolicyModel greedy = policy.with_decoding(0.0, 1.0);
    PromptScores s;
    Rng unused(0);
    for (const Prompt& p : world.prompts) {
        const Sample best = sample_response(greedy, p, unused);
        s.prompt_ids.push_back(p.id);
        s.gold.push_back(gold_score(world.gold, p, best.response));
    }
    return s;
}

}  // namespace

CellResult run_cell(const Cell& cell, std::uint64_t seed, const RunOptions& options) {
    const fs::path final_dir = cell_dir(options.output_root, cell.hash, seed);
    if (auto done = load_completed(cell, seed, final_dir)) return *done;

    const ExperimentConfig& cfg = cell.config;
    CellResult res;
    res.cell_hash = cell.hash;
    res.seed = seed;
    const fs::path work = final_dir.parent_path() / (std::to_string(seed) + ".partial");
    std::error_code ec;
    fs::remove_all(work, ec);
    fs::create_directories(work);

    std::string stage;
    auto enter = [&](const std::string& name) {
        stage = name;
        if (options.stage_hook) options.stage_hook(name);
    };
    const auto t0 = std::chrono::steady_clock::now();
    try {
        cfg.validate();
        write_text(work / "cell.json", nlohmann::json{{"cell_hash", cell.hash}, {"seed", seed},
                                                      {"config", cell_identity(cfg)}}
                                               .dump(2) + "\n");

        enter("world");
        std::shared_ptr<const World> world_ptr;
        if (options.worlds)
            world_ptr = options.worlds->get(cfg.world);
        else
            world_ptr = std::make_shared<const World>(build_world(cfg.world));
        const World& world = *world_ptr;
        res.world_hash = world.hash();

        enter("prefs");
        const PreferenceDataset noisy = build_dataset(world, cfg, seed);
        save_dataset(work / "dataset.csv", noisy);
        const DatasetSplit split = split_for_training(noisy, cfg, seed);

        enter("reward_model");
        const RewardEnsemble ensemble = build_ensemble(world, cfg, split, seed);
        save_ensemble(work / "ensemble", ensemble);

        enter("optimize");
        const std::vector<CombinerConfig> combiners = cfg.combiners.expand(cfg.ensemble_k);
        const std::size_t k = ensemble.k();
        if (cfg.optimizer.kind == OptimizerKind::bon) {
            Rng pool_rng = make_rng(seed, "bon.pool");
            const auto curves =
                run_bon_experiment(world, world.policy_init, ensemble, combiners, cfg.optimizer.bon, pool_rng);
            enter("curves");
            for (const auto& curve : curves) {
                const std::string label = curve.combiner.label();
                std::ostringstream os;
                write_bon_csv(os, curve, CurveMeta{k, seed, res.world_hash, 0.0});
                write_text(work / ("curves_" + label + ".csv"), os.str());
                PromptScores fin;
                for (std::size_t p = 0; p < world.prompts.size(); ++p) {
                    fin.prompt_ids.push_back(world.prompts[p].id);
                    fin.gold.push_back(curve.final_gold_per_prompt[p]);
                }
                std::ostringstream fs_;
                write_prompt_scores(fs_, fin);
                write_text(work / ("final_" + label + ".csv"), fs_.str());
                RunRecord r = base_record(cell, seed);
                r.combiner = curve.combiner;
                r.curve_path = rel_path(cell.hash, seed, "curves_" + label + ".csv");
                const BonRow& last = curve.rows.back();
                r.final_kl = last.kl_nats;
                r.final_proxy = last.proxy_mean;
                r.final_gold = last.gold_mean;
                res.records.push_back(std::move(r));
            }
        } else {
            const std::uint64_t ppo_seed = derive_seed(seed, "ppo");
            for (const auto& c : combiners) {
                enter("optimize:" + c.label());
                const auto r0 = std::chrono::steady_clock::now();
                PpoTrajectory traj = run_ppo(world, ensemble_reward(ensemble, world.encoder, c),
                                             gold_logger(world.gold), cfg.optimizer.ppo, ppo_seed);
                traj.combiner = c;
                const std::string label = c.label();
                std::ostringstream os;
                write_ppo_csv(os, traj, k, seed, res.world_hash);
                write_text(work / ("curves_" + label + ".csv"), os.str());
                nn::save_checkpoint(work / ("policy_" + label + ".ckpt"), traj.final_policy.net);
                std::ostringstream fs_;
                write_prompt_scores(fs_, greedy_scores(world, traj.final_policy));
                write_text(work / ("final_" + label + ".csv"), fs_.str());
                RunRecord r = base_record(cell, seed);
                r.combiner = c;
                r.curve_path = rel_path(cell.hash, seed, "curves_" + label + ".csv");
                if (!traj.rows.empty()) {
                    r.final_kl = traj.rows.back().kl_nats;
                    r.final_proxy = traj.rows.back().proxy_mean;
                    r.final_gold = traj.rows.back().gold_mean;
                }
                r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count();
                if (traj.aborted) {
                    r.status = RunStatus::failed;
                    r.failed_stage = "optimize:" + label;
                    r.message = traj.abort_reason;
                    res.status = RunStatus::failed;
                    res.failed_stage = r.failed_stage;
                    res.message = traj.abort_reason;
                }
                res.records.push_back(std::move(r));
            }
        }
    } catch (const std::exception& e) {
        res.status = RunStatus::failed;
        res.failed_stage = stage.empty() ? "setup" : stage;
        res.message = e.what();
    }
    if (cfg.optimizer.kind == OptimizerKind::bon) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (auto& r : res.records) r.wall_seconds = secs;
    }

    nlohmann::json manifest{{"schema_version", kSchemaVersion},
                            {"cell_hash", cell.hash},
                            {"seed", seed},
                            {"world_hash", res.world_hash},
                            {"status", to_string(res.status)},
                            {"stage", res.failed_stage},
                            {"message", res.message}};
    manifest["records"] = nlohmann::json::array();
    for (const auto& r : res.records) manifest["records"].push_back(record_json(r));
    write_text(work / "manifest.json", manifest.dump(2) + "\n");

    fs::remove_all(final_dir, ec);
    fs::rename(work, final_dir);
    return res;
}

bool SweepResult::all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.status == RunStatus::ok; });
}

SweepResult run_sweep(const ExperimentConfig& config, int parallelism, const fs::path& output_root,
                      const StageHook& hook, const std::string& only_cell) {
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    std::vector<Cell> cells = expand_cells(config);
    if (!only_cell.empty()) {
        std::erase_if(cells, [&](const Cell& c) { return c.hash != only_cell; });
        if (cells.empty()) throw ConfigError("no cell with hash " + only_cell + " in this config");
    }
    struct Job {
        std::size_t cell;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < cells.size(); ++c)
        for (auto s : config.seeds) jobs.push_back({c, s});

    fs::create_directories(output_root);
    WorldCache worlds;
    RunOptions opts{output_root, &worlds, hook};
    SweepResult out;
    out.cells.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++)
            out.cells[i] = run_cell(cells[jobs[i].cell], jobs[i].seed, opts);
    };
    const auto n = static_cast<std::size_t>(parallelism) < jobs.size() ? static_cast<std::size_t>(parallelism) : jobs.size();
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    out.summary_path = output_root / "summary.csv";
    std::ostringstream os;
    write_summary_csv(os, out.cells);
    write_text(out.summary_path, os.str());
    return out;
}

namespace {

std::string hidden_str(const std::vector<int>& h) {
    std::string s;
    for (std::size_t i = 0; i < h.size(); ++i) s += (i ? "x" : "") + std::to_string(h[i]);
    return s;
}

std::vector<int> parse_hidden(const std::string& s) {
    std::vector<int> out;
    std::size_t start = 0;
    while (start < s.size()) {
        auto pos = s.find('x', start);
        if (pos == std::string::npos) pos = s.size();
        out.push_back(std::stoi(s.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

constexpr const char* kSummaryHeader =
    "cell_hash,seed,optimizer,combiner,mode,lambda,member_index,k,rm_hidden,pairs,noise_rate,beta,status,stage,"
    "final_kl,final_proxy,final_gold,curve_path";

}  // namespace

void write_summary_csv(std::ostream& os, const std::vector<CellResult>& cells) {
    os << kSummaryHeader << '\n';
    for (const auto& cell : cells) {
        if (cell.records.empty()) {
            os << cell.cell_hash << ',' << cell.seed << ",,,,,,,,,,," << to_string(cell.status) << ','
               << cell.failed_stage << ",,,,\n";
            continue;
        }
        for (const auto& r : cell.records) {
            const auto& c = r.combiner;
            os << r.cell_hash << ',' << r.seed << ',' << r.optimizer << ',' << c.label() << ',' << to_string(c.mode)
               << ',' << (c.mode == CombinerMode::uwo ? fmt_double(c.lambda) : "") << ','
               << (c.mode == CombinerMode::single ? std::to_string(c.member_index) : "") << ',' << r.k << ','
               << hidden_str(r.rm_hidden) << ',' << r.pairs << ',' << fmt_double(r.noise_rate) << ','
               << fmt_double(r.beta) << ',' << to_string(r.status) << ',' << r.failed_stage << ','
               << fmt_double(r.final_kl) << ',' << fmt_double(r.final_proxy) << ',' << fmt_double(r.final_gold) << ','
               << r.curve_path << '\n';
        }
    }
}

std::vector<RunRecord> read_summary_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kSummaryHeader) throw FormatError("summary: unexpected header");
    std::vector<RunRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 18) throw FormatError("summary: expected 18 fields, got " + std::to_string(f.size()));
        RunRecord r;
        r.cell_hash = f[0];
        r.seed = std::stoull(f[1]);
        r.status = run_status_from(f[12]);
        r.failed_stage = f[13];
        if (f[3].empty()) {
            out.push_back(std::move(r));
            continue;
        }
        r.optimizer = f[2];
        r.combiner.mode = combiner_mode_from_string(f[4]);
        if (!f[5].empty()) r.combiner.lambda = parse_double(f[5]);
        if (!f[6].empty()) r.combiner.member_index = std::stoi(f[6]);
        r.k = std::stoi(f[7]);
        r.rm_hidden = parse_hidden(f[8]);
        r.pairs = std::stoi(f[9]);
        r.noise_rate = parse_double(f[10]);
        r.beta = parse_double(f[11]);
        r.final_kl = parse_double(f[14]);
        r.final_proxy = parse_double(f[15]);
        r.final_gold = parse_double(f[16]);
        r.curve_path = f[17];
        out.push_back(std::move(r));
    }
    return out;
}

PromptScores read_prompt_scores(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != "prompt_id,gold") throw FormatError(path.string() + ": unexpected header");
    PromptScores s;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (fields.size() != 2) throw FormatError(path.string() + ": expected 2 fields");
        s.prompt_ids.push_back(std::stoi(fields[0]));
        s.gold.push_back(parse_double(fields[1]));
    }
    return s;
}

void write_prompt_scores(std::ostream& os, const PromptScores& s) {
    if (s.prompt_ids.size() != s.gold.size()) throw ShapeError("prompt scores: ids and scores differ in length");
    os << "prompt_id,gold\n";
    for (std::size_t i = 0; i < s.gold.size(); ++i) os << s.prompt_ids[i] << ',' << fmt_double(s.gold[i]) << '\n';
}

double winrate(const PromptScores& a, const PromptScores& b) {
    if (a.gold.size() != a.prompt_ids.size() || b.gold.size() != b.prompt_ids.size())
        throw ShapeError("winrate: ids and scores differ in length");
    if (a.prompt_ids != b.prompt_ids) throw ShapeError("winrate: inputs are not aligned by prompt");
    if (a.gold.empty()) throw ShapeError("winrate: no prompts");
    // Counted in half-points; the upper half is reflected so that swapping the
    // arguments gives exactly 100 minus the result.
    const auto n = static_cast<std::int64_t>(a.gold.size());
    std::int64_t halves = 0;
    for (std::size_t i = 0; i < a.gold.size(); ++i) {
        if (a.gold[i] > b.gold[i])
            halves += 2;
        else if (a.gold[i] == b.gold[i])
            halves += 1;
    }
    if (halves <= n) return static_cast<double>(halves) * 50.0 / static_cast<double>(n);
    return 100.0 - static_cast<double>(2 * n - halves) * 50.0 / static_cast<double>(n);
}

fs::path resolve_output_root(const std::optional<std::string>& cli_out, const ExperimentConfig& config) {
    if (cli_out && !cli_out->empty()) return *cli_out;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return config.output_dir;
}

}  // namespace rmlab
