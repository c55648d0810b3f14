#include "rmlab/reward_model.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/json_util.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rmlab {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

nn::Algorithm algorithm_from_string(const std::string& s) {
    if (s == "adam") return nn::Algorithm::adam;
    if (s == "sgd") return nn::Algorithm::sgd;
    throw ConfigError("unknown optimizer '" + s + "'");
}

}  // namespace

double bt_loss(double r_chosen, double r_rejected) { return softplus(r_rejected - r_chosen); }

double bt_loss_grad(double r_chosen, double r_rejected) { return -sigmoid(r_rejected - r_chosen); }

void to_json(nlohmann::json& j, const RmHyper& h) {
    j = nlohmann::json{{"hidden", h.hidden},
                       {"activation", nn::to_string(h.activation)},
                       {"epochs", h.epochs},
                       {"lr", h.learning_rate},
                       {"batch_size", h.batch_size},
                       {"optimizer", h.algorithm == nn::Algorithm::adam ? "adam" : "sgd"},
                       {"center", h.center}};
}

void from_json(const nlohmann::json& j, RmHyper& h) {
    json_util::Reader r(j, "reward_model");
    r.get("hidden", h.hidden);
    std::string act = nn::to_string(h.activation);
    if (r.get("activation", act)) h.activation = nn::activation_from_string(act);
    r.get("epochs", h.epochs);
    r.get("lr", h.learning_rate);
    r.get("batch_size", h.batch_size);
    std::string algo = h.algorithm == nn::Algorithm::adam ? "adam" : "sgd";
    if (r.get("optimizer", algo)) h.algorithm = algorithm_from_string(algo);
    r.get("center", h.center);
    r.finish();
    if (h.epochs < 0 || h.batch_size < 1 || !(h.learning_rate >= 0.0))
        throw ConfigError("reward_model: epochs >= 0, batch_size >= 1 and lr >= 0 required");
}

nn::Network make_trunk_init(const ResponseEncoder& encoder, const RmHyper& hyper, std::uint64_t seed) {
    std::vector<int> widths{encoder.width()};
    widths.insert(widths.end(), hyper.hidden.begin(), hyper.hidden.end());
    widths.push_back(1);
    nn::NetworkSpec spec(widths, hyper.activation);
    return {spec, nn::init_params(spec, seed)};
}

nn::Network with_fresh_head(const nn::Network& trunk_init, std::uint64_t head_seed) {
    nn::Network net = trunk_init;
    const auto& w = net.spec.widths();
    const nn::NetworkSpec head_spec({w[w.size() - 2], w.back()});
    net.params.layers.back() = nn::init_params(head_spec, head_seed).layers.front();
    return net;
}

Vector rm_scores(const nn::Network& net, const ScoringContext& ctx, const Prompt& prompt,
                 std::span<const Response> responses) {
    if (responses.empty()) return Vector();
    return nn::forward_batch(net.spec, net.params, ctx.encoder->encode(prompt, responses)).row(0).transpose();
}

PairLoss pair_loss_and_grad(const nn::Network& net, const Matrix& chosen_features, const Matrix& rejected_features) {
    const auto n = chosen_features.cols();
    if (n == 0 || rejected_features.cols() != n) throw ShapeError("pair batch is empty or unaligned");
    nn::ForwardCache cc, rc;
    const Matrix sc = nn::forward_batch(net.spec, net.params, chosen_features, &cc);
    const Matrix sr = nn::forward_batch(net.spec, net.params, rejected_features, &rc);
    Matrix uc(1, n), ur(1, n);
    PairLoss out;
    for (Eigen::Index i = 0; i < n; ++i) {
        out.loss += bt_loss(sc(0, i), sr(0, i));
        const double g = bt_loss_grad(sc(0, i), sr(0, i)) / static_cast<double>(n);
        uc(0, i) = g;
        ur(0, i) = -g;
    }
    out.loss /= static_cast<double>(n);
    out.grad = nn::backward_batch(net.spec, net.params, cc, uc);
    out.grad += nn::backward_batch(net.spec, net.params, rc, ur);
    return out;
}

namespace {

struct EncodedPairs {
    Matrix chosen;
    Matrix rejected;
};

EncodedPairs encode_pairs(const ScoringContext& ctx, std::span<const PreferencePair> pairs) {
    std::vector<int> prompt_of;
    std::vector<Response> chosen, rejected;
    for (const auto& p : pairs) {
        prompt_of.push_back(p.prompt_id);
        chosen.push_back(p.chosen());
        rejected.push_back(p.rejected());
    }
    return {ctx.encoder->encode(ctx.prompts, prompt_of, chosen), ctx.encoder->encode(ctx.prompts, prompt_of, rejected)};
}

Validation evaluate(const nn::Network& net, const EncodedPairs& enc) {
    const auto n = enc.chosen.cols();
    if (n == 0) throw ConfigError("validation set is empty");
    const Matrix sc = nn::forward_batch(net.spec, net.params, enc.chosen);
    const Matrix sr = nn::forward_batch(net.spec, net.params, enc.rejected);
    Validation v;
    for (Eigen::Index i = 0; i < n; ++i) {
        v.accuracy += sc(0, i) > sr(0, i) ? 1.0 : (sc(0, i) == sr(0, i) ? 0.5 : 0.0);
        v.loss += bt_loss(sc(0, i), sr(0, i));
    }
    v.accuracy /= static_cast<double>(n);
    v.loss /= static_cast<double>(n);
    return v;
}

}  // namespace

Validation validate_rm(const nn::Network& net, const ScoringContext& ctx, std::span<const PreferencePair> pairs) {
    return evaluate(net, encode_pairs(ctx, pairs));
}

ProxyRewardModel train_rm(const nn::Network& trunk_init, std::uint64_t head_seed, const PreferenceDataset& train,
                          const PreferenceDataset& validation, const RmHyper& hyper, std::uint64_t shuffle_seed,
                          const ScoringContext& ctx) {
    if (train.pairs.empty()) throw ConfigError("cannot train a reward model on an empty dataset");
    if (ctx.encoder == nullptr) throw ConfigError("scoring context has no encoder");
    if (ctx.encoder->width() != trunk_init.spec.input_width()) throw ShapeError("trunk input width != encoder width");
    ProxyRewardModel model;
    model.net = with_fresh_head(trunk_init, head_seed);
    model.head_seed = head_seed;
    model.shuffle_seed = shuffle_seed;
    model.epochs = hyper.epochs;

    const EncodedPairs data = encode_pairs(ctx, train.pairs);
    const bool has_val = !validation.pairs.empty();
    const EncodedPairs val = has_val ? encode_pairs(ctx, validation.pairs) : EncodedPairs{};
    auto opt = nn::OptimizerState::make(hyper.algorithm, hyper.learning_rate, model.net.params);
    Rng rng = make_rng(shuffle_seed, "rm.shuffle");
    const auto n = static_cast<std::size_t>(data.chosen.cols());
    std::vector<Eigen::Index> order(n);
    const auto bs = static_cast<std::size_t>(hyper.batch_size);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(end));
            const Matrix c = data.chosen(Eigen::all, idx);
            const Matrix r = data.rejected(Eigen::all, idx);
            auto batch = pair_loss_and_grad(model.net, c, r);
            loss_sum += batch.loss * static_cast<double>(end - start);
            nn::optimizer_step(opt, model.net.params, batch.grad);
        }
        EpochMetrics m;
        m.epoch = epoch + 1;
        m.train_loss = loss_sum / static_cast<double>(n);
        if (has_val) {
            const auto v = evaluate(model.net, val);
            m.val_loss = v.loss;
            m.val_accuracy = v.accuracy;
        }
        model.history.push_back(m);
    }
    if (has_val) {
        const auto v = evaluate(model.net, val);
        model.val_accuracy = v.accuracy;
        model.val_loss = v.loss;
    }
    return model;
}

void center_reward_model(ProxyRewardModel& model, const ScoringContext& ctx, const PreferenceDataset& data) {
    if (data.pairs.empty()) throw ConfigError("cannot center a reward model on an empty dataset");
    std::vector<int> prompt_of;
    std::vector<Response> responses;
    for (const auto& p : data.pairs) {
        prompt_of.insert(prompt_of.end(), {p.prompt_id, p.prompt_id});
        responses.push_back(p.response_a);
        responses.push_back(p.response_b);
    }
    const Matrix x = ctx.encoder->encode(ctx.prompts, prompt_of, responses);
    const double mean = nn::forward_batch(model.net.spec, model.net.params, x).mean();
    model.net.params.layers.back().bias(0) -= mean;
    model.center_offset += mean;
}

RewardEnsemble train_ensemble(int k, const nn::Network& trunk_init, const PreferenceDataset& train,
                              const PreferenceDataset& validation, const RmHyper& hyper, std::uint64_t base_seed,
                              const ScoringContext& ctx) {
    if (k < 1) throw ConfigError("ensemble size must be >= 1");
    RewardEnsemble e;
    e.trunk_hash = network_hash(trunk_init);
    e.base_seed = base_seed;
    for (int i = 0; i < k; ++i) {
        const auto ui = static_cast<std::uint64_t>(i);
        e.members.push_back(train_rm(trunk_init, base_seed + ui, train, validation, hyper, base_seed + 1000 + ui, ctx));
        if (hyper.center) center_reward_model(e.members.back(), ctx, train);
    }
    return e;
}

Matrix member_scores(const RewardEnsemble& ensemble, const ResponseEncoder& encoder, std::span<const Prompt> prompts,
                     std::span<const int> prompt_of, std::span<const Response> responses) {
    const auto n = static_cast<Eigen::Index>(responses.size());
    Matrix out(static_cast<Eigen::Index>(ensemble.k()), n);
    if (n == 0) return out;
    const Matrix x = encoder.encode(prompts, prompt_of, responses);
    for (std::size_t m = 0; m < ensemble.k(); ++m) {
        const auto& net = ensemble.members[m].net;
        out.row(static_cast<Eigen::Index>(m)) = nn::forward_batch(net.spec, net.params, x).row(0);
    }
    return out;
}

std::string network_hash(const nn::Network& net) {
    std::ostringstream os(std::ios::binary);
    nn::write_checkpoint(os, net);
    return hex64(fnv1a64(os.str()));
}

void save_ensemble(const std::filesystem::path& dir, const RewardEnsemble& e) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["k"] = e.k();
    manifest["trunk_hash"] = e.trunk_hash;
    manifest["base_seed"] = e.base_seed;
    manifest["members"] = nlohmann::json::array();
    for (std::size_t i = 0; i < e.k(); ++i) {
        const auto& m = e.members[i];
        const std::string file = "member_" + std::to_string(i) + ".ckpt";
        std::ostringstream os(std::ios::binary);
        nn::write_checkpoint(os, m.net);
        nlohmann::json meta{{"head_seed", m.head_seed},
                            {"shuffle_seed", m.shuffle_seed},
                            {"epochs", m.epochs},
                            {"val_accuracy", m.val_accuracy},
                            {"val_loss", m.val_loss},
                            {"center_offset", m.center_offset}};
        meta["history"] = nlohmann::json::array();
        for (const auto& h : m.history)
            meta["history"].push_back(
                {{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss}, {"val_accuracy", h.val_accuracy}});
        const std::string bytes = os.str();
        std::ofstream f(dir / file, std::ios::binary);
        if (!f) throw FormatError("cannot write " + (dir / file).string());
        f << bytes << "RMLAB-RM-META\n" << meta.dump() << '\n';
        manifest["members"].push_back({{"file", file}, {"hash", hex64(fnv1a64(bytes))}, {"head_seed", m.head_seed},
                                       {"shuffle_seed", m.shuffle_seed}});
    }
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << '\n';
}

RewardEnsemble load_ensemble(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("no ensemble manifest in " + dir.string());
    const auto manifest = nlohmann::json::parse(mf);
    RewardEnsemble e;
    e.trunk_hash = manifest.at("trunk_hash").get<std::string>();
    e.base_seed = manifest.at("base_seed").get<std::uint64_t>();
    for (const auto& entry : manifest.at("members")) {
        std::ifstream f(dir / entry.at("file").get<std::string>(), std::ios::binary);
        if (!f) throw FormatError("missing ensemble member " + entry.at("file").get<std::string>());
        ProxyRewardModel m;
        m.net = nn::read_checkpoint(f);
        std::string tag, meta_line;
        std::getline(f, tag);
        std::getline(f, meta_line);
        if (tag != "RMLAB-RM-META") throw FormatError("reward model checkpoint lacks metadata block");
        const auto meta = nlohmann::json::parse(meta_line);
        m.head_seed = meta.at("head_seed").get<std::uint64_t>();
        m.shuffle_seed = meta.at("shuffle_seed").get<std::uint64_t>();
        m.epochs = meta.at("epochs").get<int>();
        m.val_accuracy = meta.at("val_accuracy").get<double>();
        m.val_loss = meta.at("val_loss").get<double>();
        m.center_offset = meta.at("center_offset").get<double>();
        for (const auto& h : meta.at("history"))
            m.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(), h.at("val_loss").get<double>(),
                                 h.at("val_accuracy").get<double>()});
        if (network_hash(m.net) != entry.at("hash").get<std::string>())
            throw FormatError("ensemble member hash mismatch for " + entry.at("file").get<std::string>());
        e.members.push_back(std::move(m));
    }
    if (e.members.size() != manifest.at("k").get<std::size_t>()) throw FormatError("ensemble manifest k mismatch");
    return e;
}

}  // namespace rmlab
