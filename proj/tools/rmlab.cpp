// rmlab: command-line front end for the overoptimization lab.

#include "rmlab/errors.hpp"
#include "rmlab/harness.hpp"
#include "rmlab/plot.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace rmlab;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    int parallelism = 1;
    std::string cell;
};

ExperimentConfig load_or_default(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.seeds = {*c.seed};
    return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_parallelism) {
    app->add_option("--config", c.config, "Experiment config (JSON)");
    app->add_option("--seed", c.seed, "Run only this experiment seed");
    app->add_option("--out", c.out, std::string("Output root (overrides ") + kOutputRootEnv + " and the config)");
    app->add_option("--cell", c.cell, "Restrict to the cell with this hash");
    if (with_parallelism)
        app->add_option("--parallelism", c.parallelism, "Worker threads")->check(CLI::PositiveNumber);
}

const Cell& pick_cell(const std::vector<Cell>& cells, const std::string& hash) {
    if (hash.empty()) {
        if (cells.size() != 1) throw ConfigError("the config expands to several cells; choose one with --cell");
        return cells.front();
    }
    for (const auto& c : cells)
        if (c.hash == hash) return c;
    throw ConfigError("no cell with hash " + hash + " in this config");
}

int cmd_world(const Common& c) {
    const ExperimentConfig cfg = load_or_default(c);
    const fs::path root = resolve_output_root(c.out, cfg);
    const World world = build_world(cfg.world);
    const std::string hash = world.hash();
    fs::create_directories(root / "worlds");
    save_world(root / "worlds" / (hash + ".ckpt"), world);
    std::cout << "world " << hash << " -> " << (root / "worlds" / (hash + ".ckpt")).string() << '\n';
    return 0;
}

int cmd_gen_prefs(const Common& c) {
    const ExperimentConfig cfg = load_or_default(c);
    const std::vector<Cell> cells = expand_cells(cfg);
    const Cell& cell = pick_cell(cells, c.cell);
    const fs::path root = resolve_output_root(c.out, cfg);
    const World world = build_world(cell.config.world);
    for (auto seed : cfg.seeds) {
        const PreferenceDataset data = build_dataset(world, cell.config, seed);
        const fs::path dir = root / "prefs" / cell.hash / std::to_string(seed);
        fs::create_directories(dir);
        save_dataset(dir / "dataset.csv", data);
        std::cout << "seed " << seed << ": " << data.pairs.size() << " pairs, " << data.flipped_count()
                  << " flipped -> " << (dir / "dataset.csv").string() << '\n';
    }
    return 0;
}

int cmd_train_rm(const Common& c) {
    const ExperimentConfig cfg = load_or_default(c);
    const std::vector<Cell> cells = expand_cells(cfg);
    const Cell& cell = pick_cell(cells, c.cell);
    const fs::path root = resolve_output_root(c.out, cfg);
    const World world = build_world(cell.config.world);
    for (auto seed : cfg.seeds) {
        const PreferenceDataset data = build_dataset(world, cell.config, seed);
        const RewardEnsemble ens = build_ensemble(world, cell.config, split_for_training(data, cell.config, seed), seed);
        const fs::path dir = root / "ensembles" / cell.hash / std::to_string(seed);
        save_ensemble(dir, ens);
        std::cout << "seed " << seed << ": validation accuracy";
        for (const auto& m : ens.members) std::cout << ' ' << m.val_accuracy;
        std::cout << " -> " << dir.string() << '\n';
    }
    return 0;
}

void report(const CellResult& r) {
    std::cout << r.cell_hash << " seed " << r.seed << ' ' << to_string(r.status) << (r.reused ? " (reused)" : "");
    if (r.status != RunStatus::ok) std::cout << " at " << r.failed_stage << ": " << r.message;
    std::cout << '\n';
    for (const auto& rec : r.records)
        std::printf("  %-10s kl %8.4f  proxy %8.4f  gold %8.4f\n", rec.combiner.label().c_str(), rec.final_kl,
                    rec.final_proxy, rec.final_gold);
}

int cmd_optimize(const Common& c) {
    const ExperimentConfig cfg = load_or_default(c);
    const std::vector<Cell> cells = expand_cells(cfg);
    const Cell& cell = pick_cell(cells, c.cell);
    const fs::path root = resolve_output_root(c.out, cfg);
    WorldCache worlds;
    bool ok = true;
    for (auto seed : cfg.seeds) {
        const CellResult r = run_cell(cell, seed, RunOptions{root, &worlds, {}});
        report(r);
        ok = ok && r.status == RunStatus::ok;
    }
    return ok ? 0 : 1;
}

int cmd_sweep(const Common& c) {
    const ExperimentConfig cfg = load_or_default(c);
    const fs::path root = resolve_output_root(c.out, cfg);
    const SweepResult res = run_sweep(cfg, c.parallelism, root, {}, c.cell);
    for (const auto& r : res.cells) report(r);
    std::cout << "summary -> " << res.summary_path.string() << '\n';
    return res.all_ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rmlab: reward-model overoptimization lab"};
    app.require_subcommand(1);
    Common common;

    auto* world = app.add_subcommand("world", "Build the synthetic world and save its checkpoint");
    add_common(world, common, false);
    auto* prefs = app.add_subcommand("gen-prefs", "Generate gold-labeled, noised preference pairs");
    add_common(prefs, common, false);
    auto* train = app.add_subcommand("train-rm", "Train the proxy reward-model ensemble");
    add_common(train, common, false);
    auto* optimize = app.add_subcommand("optimize", "Run one cell end to end (best-of-n or PPO)");
    add_common(optimize, common, false);
    auto* sweep = app.add_subcommand("sweep", "Run every cell of the config's grid and write summary.csv");
    add_common(sweep, common, true);

    auto* winrate_cmd = app.add_subcommand("winrate", "Win-rate of final answers A over B (percent)");
    std::string wa, wb;
    winrate_cmd->add_option("a", wa, "final_<label>.csv of method A")->required()->check(CLI::ExistingFile);
    winrate_cmd->add_option("b", wb, "final_<label>.csv of method B")->required()->check(CLI::ExistingFile);

    auto* plot = app.add_subcommand("plot", "Render SVG figures");
    plot->require_subcommand(1);
    auto* curves = plot->add_subcommand("curves", "Gold/proxy against KL, one band per combiner");
    std::vector<std::string> curve_files;
    std::string plot_out, title;
    double kl_cap = 20.0;
    curves->add_option("files", curve_files, "Curve CSV files")->required()->check(CLI::ExistingFile);
    curves->add_option("--out", plot_out, "Output SVG")->required();
    curves->add_option("--kl-cap", kl_cap, "Drop points beyond this KL (nats)");
    curves->add_option("--title", title);
    auto* bars = plot->add_subcommand("bars", "Final gold per combiner over one sweep axis");
    std::string summary, axis, mode;
    std::vector<std::string> required;
    bars->add_option("--summary", summary, "summary.csv from a sweep")->required()->check(CLI::ExistingFile);
    bars->add_option("--axis", axis, "rm_size, data_size, k, lambda or beta")->required();
    bars->add_option("--mode", mode, "Restrict to one combiner mode");
    bars->add_option("--require", required, "Axis values that must be present");
    bars->add_option("--out", plot_out, "Output SVG")->required();
    bars->add_option("--title", title);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*world) return cmd_world(common);
        if (*prefs) return cmd_gen_prefs(common);
        if (*train) return cmd_train_rm(common);
        if (*optimize) return cmd_optimize(common);
        if (*sweep) return cmd_sweep(common);
        if (*winrate_cmd) {
            std::printf("%.4f\n", winrate(read_prompt_scores(wa), read_prompt_scores(wb)));
            return 0;
        }
        if (*curves) {
            std::vector<fs::path> paths(curve_files.begin(), curve_files.end());
            plot_curves(paths, plot_out, CurvePlotOptions{kl_cap, title});
            std::cout << plot_out << '\n';
            return 0;
        }
        if (*bars) {
            std::ifstream f(summary);
            const auto records = read_summary_csv(f);
            BarOptions opts;
            if (!mode.empty()) opts.mode = combiner_mode_from_string(mode);
            opts.required = required;
            opts.title = title;
            plot_bars(records, bar_axis_from_string(axis), plot_out, opts);
            std::cout << plot_out << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
