#include "rmlab/nn.hpp"

#include "rmlab/errors.hpp"
#include "rmlab/rng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <utility>

namespace rmlab::nn {

namespace {

constexpr const char* kCheckpointMagic = "RMLAB-NN 1";

void apply_activation(Activation act, Matrix& z) {
    switch (act) {
        case Activation::tanh: z = z.array().tanh(); break;
        case Activation::relu: z = z.cwiseMax(0.0); break;
    }
}

double activate(Activation act, double z) { return act == Activation::tanh ? std::tanh(z) : std::max(z, 0.0); }

// Derivative expressed through the post-activation value.
Matrix activation_derivative(Activation act, const Matrix& a) {
    if (act == Activation::tanh) return (1.0 - a.array().square()).matrix();
    return (a.array() > 0.0).cast<double>().matrix();
}

Matrix column(std::span<const double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
    return m;
}

void check_input(const NetworkSpec& spec, Eigen::Index rows) {
    if (rows != spec.input_width())
        throw ShapeError("input width " + std::to_string(rows) + " does not match network input width " +
                         std::to_string(spec.input_width()));
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "'");
}

NetworkSpec::NetworkSpec(std::vector<int> layer_widths, Activation activation)
    : widths_(std::move(layer_widths)), activation_(activation) {
    if (widths_.size() < 2) throw ConfigError("network needs at least two layer widths");
    for (int w : widths_)
        if (w < 1) throw ConfigError("layer widths must be >= 1");
}

std::size_t NetworkSpec::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l)
        n += static_cast<std::size_t>(widths_[l + 1]) * (static_cast<std::size_t>(widths_[l]) + 1);
    return n;
}

ParamGradient ParamGradient::zeros_like(const NetworkParams& p) {
    ParamGradient g;
    g.layers.reserve(p.layers.size());
    for (const auto& l : p.layers)
        g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return g;
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& o) {
    if (o.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].weight += o.layers[l].weight;
        layers[l].bias += o.layers[l].bias;
    }
    return *this;
}

ParamGradient& ParamGradient::operator*=(double s) {
    for (auto& l : layers) {
        l.weight *= s;
        l.bias *= s;
    }
    return *this;
}

double ParamGradient::max_abs() const {
    double m = 0.0;
    for (const auto& l : layers) {
        if (l.weight.size()) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
        if (l.bias.size()) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
    }
    return m;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
    NetworkParams p;
    p.seed = seed;
    Rng rng = make_rng(seed, "nn.init");
    const auto& w = spec.widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        Layer layer{Matrix(w[l + 1], w[l]), Vector::Zero(w[l + 1])};
        const double scale = 1.0 / std::sqrt(static_cast<double>(w[l]));
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = scale * standard_normal(rng);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

void validate_params(const NetworkSpec& spec, const NetworkParams& params) {
    const auto& w = spec.widths();
    if (params.layers.size() != spec.num_layers()) throw ShapeError("parameter layer count does not match spec");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        if (layer.weight.rows() != w[l + 1] || layer.weight.cols() != w[l] || layer.bias.size() != w[l + 1])
            throw ShapeError("layer " + std::to_string(l) + " shape does not match spec");
        if (!layer.weight.allFinite() || !layer.bias.allFinite())
            throw NumericError("layer " + std::to_string(l) + " has non-finite parameters");
    }
}

Matrix forward_batch(const NetworkSpec& spec, const NetworkParams& params, const Matrix& inputs, ForwardCache* cache) {
    check_input(spec, inputs.rows());
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(inputs);
    }
    Matrix a = inputs;
    const std::size_t n = params.layers.size();
    for (std::size_t l = 0; l < n; ++l) {
        const auto& layer = params.layers[l];
        Matrix z = layer.weight * a;
        z.colwise() += layer.bias;
        if (l + 1 < n) apply_activation(spec.activation(), z);
        a = std::move(z);
        if (cache) cache->activations.push_back(a);
    }
    return a;
}

Vector forward(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input) {
    return forward_batch(spec, params, column(input)).col(0);
}

ParamGradient backward_batch(const NetworkSpec& spec, const NetworkParams& params, const ForwardCache& cache,
                             const Matrix& upstream, Matrix* input_grad) {
    const std::size_t n = params.layers.size();
    if (cache.activations.size() != n + 1) throw ShapeError("forward cache does not match network depth");
    if (upstream.rows() != spec.output_width() || upstream.cols() != cache.activations.back().cols())
        throw ShapeError("upstream gradient shape does not match network output");
    ParamGradient g = ParamGradient::zeros_like(params);
    Matrix delta = upstream;  // d objective / d pre-activation of layer l
    for (std::size_t l = n; l-- > 0;) {
        const Matrix& a_in = cache.activations[l];
        g.layers[l].weight.noalias() = delta * a_in.transpose();
        g.layers[l].bias = delta.rowwise().sum();
        Matrix d_in = params.layers[l].weight.transpose() * delta;
        if (l > 0) {
            delta = d_in.cwiseProduct(activation_derivative(spec.activation(), a_in));
        } else if (input_grad) {
            *input_grad = std::move(d_in);
        }
    }
    return g;
}

Backward backward(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                  std::span<const double> upstream) {
    ForwardCache cache;
    forward_batch(spec, params, column(input), &cache);
    Matrix gin;
    Backward out;
    out.params = backward_batch(spec, params, cache, column(upstream), &gin);
    out.input = gin.col(0);
    return out;
}

namespace {

// Output of <u, f(x)> when pre-activation z_l[i] is shifted by dz. Only the
// affected unit is recomputed at layer l; the next layer gets a rank-1 update.
class PerturbedEvaluator {
public:
    PerturbedEvaluator(const NetworkSpec& spec, const NetworkParams& params, const Vector& x, const Vector& u)
        : spec_(spec), params_(params), u_(u) {
        const std::size_t n = params.layers.size();
        Vector a = x;
        acts_.push_back(a);
        for (std::size_t l = 0; l < n; ++l) {
            Vector z = params.layers[l].weight * a + params.layers[l].bias;
            pre_.push_back(z);
            if (l + 1 < n)
                for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = activate(spec.activation(), z(k));
            a = z;
            acts_.push_back(a);
        }
    }

    double input_of(std::size_t l, Eigen::Index j) const { return acts_[l](j); }

    // f(z_i + dz_plus) - f(z_i + dz_minus) where z_i is the pre-activation of unit i
    // in layer l. Both branches are carried as offsets from the cached forward pass
    // so the difference does not cancel against the O(1) output.
    double eval_diff(std::size_t l, Eigen::Index i, double dz_plus, double dz_minus) const {
        const std::size_t n = params_.layers.size();
        if (l + 1 == n) return u_(i) * (dz_plus - dz_minus);
        double sum = 0.0;
        for (const auto& [d, sign] : {std::pair{dz_plus, 1.0}, std::pair{dz_minus, -1.0}}) {
            const double o = offset(pre_[l](i), d);
            Vector e = params_.layers[l + 1].weight.col(i) * o;
            for (std::size_t m = l + 1; m + 1 < n; ++m) {
                Vector off(e.size());
                for (Eigen::Index k = 0; k < e.size(); ++k) off(k) = offset(pre_[m](k), e(k));
                e = params_.layers[m + 1].weight * off;
            }
            sum += sign * u_.dot(e);
        }
        return sum;
    }

private:
    // activate(z + e) - activate(z) without cancellation
    double offset(double z, double e) const {
        if (spec_.activation() == Activation::tanh) {
            if (std::abs(z) < 20.0 && std::abs(z + e) < 20.0) return std::sinh(e) / (std::cosh(z + e) * std::cosh(z));
            return std::tanh(z + e) - std::tanh(z);
        }
        if (z > 0.0 && z + e > 0.0) return e;
        if (z <= 0.0 && z + e <= 0.0) return 0.0;
        return std::max(z + e, 0.0) - std::max(z, 0.0);
    }

    const NetworkSpec& spec_;
    const NetworkParams& params_;
    Vector u_;
    std::vector<Vector> acts_;
    std::vector<Vector> pre_;
};

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / (std::abs(analytic) + std::abs(fd) + 1e-12);
}

}  // namespace

double grad_check_against(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                          double epsilon, std::span<const double> upstream, const ParamGradient& analytic) {
    if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw DomainError("grad_check epsilon must lie in (0, 1e-2]");
    validate_params(spec, params);
    check_input(spec, static_cast<Eigen::Index>(input.size()));
    const PerturbedEvaluator f(spec, params, column(input).col(0), column(upstream).col(0));
    double worst = 0.0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
                const double x = f.input_of(l, j);
                const double fd = f.eval_diff(l, i, epsilon * x, -epsilon * x) / (2.0 * epsilon);
                worst = std::max(worst, rel_err(analytic.layers[l].weight(i, j), fd));
            }
            const double fd = f.eval_diff(l, i, epsilon, -epsilon) / (2.0 * epsilon);
            worst = std::max(worst, rel_err(analytic.layers[l].bias(i), fd));
        }
    }
    return worst;
}

double grad_check(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                  double epsilon, std::optional<std::span<const double>> upstream) {
    std::vector<double> ones(static_cast<std::size_t>(spec.output_width()), 1.0);
    const auto u = upstream.value_or(std::span<const double>(ones));
    const auto analytic = backward(spec, params, input, u);
    return grad_check_against(spec, params, input, epsilon, u, analytic.params);
}

OptimizerState OptimizerState::make(Algorithm algorithm, double learning_rate, const NetworkParams& like) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    OptimizerState s;
    s.algorithm = algorithm;
    s.learning_rate = learning_rate;
    if (algorithm == Algorithm::adam) {
        s.first_moment = ParamGradient::zeros_like(like).layers;
        s.second_moment = s.first_moment;
    }
    return s;
}

void optimizer_step(OptimizerState& state, NetworkParams& params, const ParamGradient& grads) {
    if (grads.layers.size() != params.layers.size()) throw ShapeError("gradient does not match parameters");
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        const auto& g = grads.layers[l];
        if (g.weight.rows() != params.layers[l].weight.rows() || g.weight.cols() != params.layers[l].weight.cols() ||
            g.bias.size() != params.layers[l].bias.size())
            throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
        if (!g.weight.allFinite() || !g.bias.allFinite())
            throw NumericError("non-finite gradient in layer " + std::to_string(l));
    }
    state.step += 1;
    const double lr = state.learning_rate;
    if (state.algorithm == Algorithm::sgd) {
        for (std::size_t l = 0; l < grads.layers.size(); ++l) {
            params.layers[l].weight -= lr * grads.layers[l].weight;
            params.layers[l].bias -= lr * grads.layers[l].bias;
        }
        return;
    }
    if (state.first_moment.size() != params.layers.size())
        throw ShapeError("adam moments do not match parameters");
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
    };
    for (std::size_t l = 0; l < grads.layers.size(); ++l) {
        update(params.layers[l].weight, state.first_moment[l].weight, state.second_moment[l].weight,
               grads.layers[l].weight);
        update(params.layers[l].bias, state.first_moment[l].bias, state.second_moment[l].bias, grads.layers[l].bias);
    }
}

namespace {

void write_f64(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

double read_f64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw FormatError("checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& os, const Network& net) {
    validate_params(net.spec, net.params);
    nlohmann::json header;
    header["widths"] = net.spec.widths();
    header["activation"] = to_string(net.spec.activation());
    header["seed"] = net.params.seed;
    header["layout"] = "row-major weight then bias, f64 little-endian";
    os << kCheckpointMagic << '\n' << header.dump() << '\n';
    for (const auto& layer : net.params.layers) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) write_f64(os, layer.weight(r, c));
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) write_f64(os, layer.bias(r));
    }
}

Network read_checkpoint(std::istream& is) {
    std::string magic, header_line;
    std::getline(is, magic);
    if (magic != kCheckpointMagic) throw FormatError("not a network checkpoint");
    std::getline(is, header_line);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what());
    }
    Network net{NetworkSpec(header.at("widths").get<std::vector<int>>(),
                            activation_from_string(header.at("activation").get<std::string>())),
                {}};
    net.params.seed = header.at("seed").get<std::uint64_t>();
    const auto& w = net.spec.widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        Layer layer{Matrix(w[l + 1], w[l]), Vector(w[l + 1])};
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = read_f64(is);
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = read_f64(is);
        net.params.layers.push_back(std::move(layer));
    }
    return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    write_checkpoint(os, net);
}

Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot read " + path.string());
    return read_checkpoint(is);
}

}  // namespace rmlab::nn
