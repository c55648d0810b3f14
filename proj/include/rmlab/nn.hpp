#pragma once

// Fixed feedforward stacks with exact reverse-mode gradients.
//
// Column convention: a batch of inputs is an (in_width x batch) matrix, one
// example per column. Weights are (out_width x in_width).

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rmlab::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Layer widths (input first, output last) plus the hidden activation.
/// The output layer is always linear.
class NetworkSpec {
public:
    NetworkSpec() = default;
    explicit NetworkSpec(std::vector<int> layer_widths, Activation activation = Activation::tanh);

    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return activation_; }
    int input_width() const { return widths_.front(); }
    int output_width() const { return widths_.back(); }
    std::size_t num_layers() const { return widths_.size() - 1; }
    std::size_t parameter_count() const;

    bool operator==(const NetworkSpec&) const = default;

private:
    std::vector<int> widths_{1, 1};
    Activation activation_ = Activation::tanh;
};

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out

    bool operator==(const Layer& o) const { return weight == o.weight && bias == o.bias; }
};

struct NetworkParams {
    std::vector<Layer> layers;
    std::uint64_t seed = 0;

    bool operator==(const NetworkParams& o) const { return seed == o.seed && layers == o.layers; }
};

/// Same shape as NetworkParams; holds d(objective)/d(parameter).
struct ParamGradient {
    std::vector<Layer> layers;

    static ParamGradient zeros_like(const NetworkParams& p);
    ParamGradient& operator+=(const ParamGradient& o);
    ParamGradient& operator*=(double s);
    /// Max |entry| over all layers.
    double max_abs() const;
};

/// A spec together with its parameters.
struct Network {
    NetworkSpec spec;
    NetworkParams params;

    bool operator==(const Network&) const = default;
};

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Throws ShapeError when params do not match spec, NumericError on non-finite entries.
void validate_params(const NetworkSpec& spec, const NetworkParams& params);

/// Post-activation values of every layer for a batch; activations[0] is the input.
struct ForwardCache {
    std::vector<Matrix> activations;
};

Vector forward(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input);
Matrix forward_batch(const NetworkSpec& spec, const NetworkParams& params, const Matrix& inputs,
                     ForwardCache* cache = nullptr);

struct Backward {
    ParamGradient params;
    Vector input;
};

/// Gradient of <upstream, forward(input)> w.r.t. parameters and input.
Backward backward(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                  std::span<const double> upstream);

/// Batched backward from a cache produced by forward_batch. Parameter gradients
/// are summed over the batch. If input_grad is non-null it receives (in x batch).
ParamGradient backward_batch(const NetworkSpec& spec, const NetworkParams& params, const ForwardCache& cache,
                             const Matrix& upstream, Matrix* input_grad = nullptr);

/// Max over parameters of |analytic - central FD| / (|analytic| + |fd| + 1e-12).
/// The output is contracted with `upstream` (all ones when omitted).
double grad_check(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                  double epsilon, std::optional<std::span<const double>> upstream = std::nullopt);

/// Same comparison against a caller-supplied gradient (used to build negative controls).
double grad_check_against(const NetworkSpec& spec, const NetworkParams& params, std::span<const double> input,
                          double epsilon, std::span<const double> upstream, const ParamGradient& analytic);

enum class Algorithm { sgd, adam };

struct OptimizerState {
    Algorithm algorithm = Algorithm::adam;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<Layer> first_moment;
    std::vector<Layer> second_moment;

    static OptimizerState make(Algorithm algorithm, double learning_rate, const NetworkParams& like);
};

/// Gradient-descent update (p <- p - lr * direction). Throws NumericError on
/// non-finite gradients, naming the layer.
void optimizer_step(OptimizerState& state, NetworkParams& params, const ParamGradient& grads);

// Checkpoints: magic line, JSON header (spec, seed, shapes), then the
// layer arrays as little-endian IEEE doubles, row-major weight then bias.
void write_checkpoint(std::ostream& os, const Network& net);
Network read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Network& net);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace rmlab::nn
