#include "rmlab/bon.hpp"
#include "rmlab/combine.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/harness.hpp"
#include "rmlab/plot.hpp"
#include "rmlab/ppo.hpp"
#include "rmlab/world.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

namespace py = pybind11;
using namespace rmlab;

namespace {

ExperimentConfig config_from(const std::string& text) {
    return nlohmann::json::parse(text).get<ExperimentConfig>();
}

CombinerConfig combiner(const std::string& mode, double lambda, int member_index) {
    CombinerConfig c;
    c.mode = combiner_mode_from_string(mode);
    c.lambda = lambda;
    c.member_index = member_index;
    return c;
}

py::dict record_dict(const RunRecord& r) {
    py::dict d;
    d["cell_hash"] = r.cell_hash;
    d["seed"] = r.seed;
    d["optimizer"] = r.optimizer;
    d["combiner"] = r.combiner.label();
    d["mode"] = to_string(r.combiner.mode);
    d["lambda"] = r.combiner.lambda;
    d["member_index"] = r.combiner.member_index;
    d["k"] = r.k;
    d["rm_hidden"] = r.rm_hidden;
    d["pairs"] = r.pairs;
    d["noise_rate"] = r.noise_rate;
    d["beta"] = r.beta;
    d["status"] = to_string(r.status);
    d["stage"] = r.failed_stage;
    d["final_kl"] = r.final_kl;
    d["final_proxy"] = r.final_proxy;
    d["final_gold"] = r.final_gold;
    d["curve_path"] = r.curve_path;
    return d;
}

Response tokens_to_response(const std::vector<int>& t) { return Response{t}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the reward-model overoptimization lab";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

    m.def("kl_bon", &kl_bon, py::arg("n"));
    m.def("bon_weights", &bon_weights, py::arg("N"), py::arg("n"));
    m.def(
        "bon_unbiased_curve",
        [](const std::vector<double>& proxy, const std::vector<double>& gold, std::size_t n_max) {
            return bon_unbiased_curve(proxy, gold, n_max);
        },
        py::arg("proxy"), py::arg("gold"), py::arg("n_max"));
    m.def("bon_rank_kl", &bon_rank_kl, py::arg("M"), py::arg("n"));

    m.def(
        "combine",
        [](const std::vector<double>& scores, const std::string& mode, double lambda, int member_index) {
            return combine(scores, combiner(mode, lambda, member_index));
        },
        py::arg("scores"), py::arg("mode"), py::arg("lam") = 0.5, py::arg("member_index") = 0);
    m.def(
        "intra_variance", [](const std::vector<double>& s) { return intra_variance(s); }, py::arg("scores"));

    m.def(
        "winrate",
        [](const std::vector<int>& ids_a, const std::vector<double>& a, const std::vector<int>& ids_b,
           const std::vector<double>& b) { return winrate(PromptScores{ids_a, a}, PromptScores{ids_b, b}); },
        py::arg("ids_a"), py::arg("gold_a"), py::arg("ids_b"), py::arg("gold_b"));

    py::class_<World, std::shared_ptr<World>>(m, "World")
        .def(py::init([](const std::string& spec_json) {
                 return std::make_shared<World>(build_world(nlohmann::json::parse(spec_json).get<WorldSpec>()));
             }),
             py::arg("spec_json"))
        .def_property_readonly("hash", &World::hash)
        .def_property_readonly("n_prompts", [](const World& w) { return w.prompts.size(); })
        .def_property_readonly("spec_json", [](const World& w) { return nlohmann::json(w.spec).dump(); })
        .def(
            "gold_score",
            [](const World& w, int prompt, const std::vector<int>& tokens) {
                return gold_score(w.gold, w.prompts.at(static_cast<std::size_t>(prompt)), tokens_to_response(tokens));
            },
            py::arg("prompt"), py::arg("tokens"))
        .def(
            "logprob",
            [](const World& w, int prompt, const std::vector<int>& tokens, double top_p) {
                return response_logprob(w.policy_init.with_decoding(1.0, top_p),
                                        w.prompts.at(static_cast<std::size_t>(prompt)), tokens_to_response(tokens));
            },
            py::arg("prompt"), py::arg("tokens"), py::arg("top_p") = 1.0)
        .def(
            "all_logprobs",
            [](const World& w, int prompt, double top_p) {
                return all_response_logprobs(w.policy_init.with_decoding(1.0, top_p),
                                             w.prompts.at(static_cast<std::size_t>(prompt)));
            },
            py::arg("prompt"), py::arg("top_p") = 1.0)
        .def(
            "sample",
            [](const World& w, int prompt, int count, std::uint64_t seed) {
                Rng rng = make_rng(seed, "python.sample");
                std::vector<std::vector<int>> out;
                for (auto& s : sample_responses(w.policy_init, w.prompts.at(static_cast<std::size_t>(prompt)), count, rng))
                    out.push_back(std::move(s.response.tokens));
                return out;
            },
            py::arg("prompt"), py::arg("count"), py::arg("seed") = 0);

    m.def(
        "cell_hashes",
        [](const std::string& config_json) {
            std::vector<std::string> out;
            for (const auto& c : expand_cells(config_from(config_json))) out.push_back(c.hash);
            return out;
        },
        py::arg("config_json"));

    m.def(
        "run_sweep",
        [](const std::string& config_json, int parallelism, const std::filesystem::path& out, const std::string& cell) {
            const ExperimentConfig cfg = config_from(config_json);
            SweepResult r;
            {
                py::gil_scoped_release release;
                r = run_sweep(cfg, parallelism, out, {}, cell);
            }
            py::list records;
            for (const auto& c : r.cells)
                for (const auto& rec : c.records) records.append(record_dict(rec));
            py::dict d;
            d["ok"] = r.all_ok();
            d["summary_path"] = r.summary_path;
            d["records"] = records;
            return d;
        },
        py::arg("config_json"), py::arg("parallelism") = 1, py::arg("out"), py::arg("cell") = "");

    m.def(
        "read_summary",
        [](const std::filesystem::path& path) {
            std::ifstream f(path);
            if (!f) throw FormatError("cannot open " + path.string());
            py::list out;
            for (const auto& r : read_summary_csv(f)) out.append(record_dict(r));
            return out;
        },
        py::arg("path"));

    m.def(
        "plot_curves",
        [](const std::vector<std::filesystem::path>& files, const std::filesystem::path& out, double kl_cap,
           const std::string& title) { plot_curves(files, out, CurvePlotOptions{kl_cap, title}); },
        py::arg("files"), py::arg("out"), py::arg("kl_cap") = 20.0, py::arg("title") = "");
}
