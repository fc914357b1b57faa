#pragma once

#include "ipfield/matrix.hpp"
#include "ipfield/synth_data.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <utility>
#include <vector>

namespace ipfield {

enum class Activation : std::uint32_t { Relu = 0, Tanh = 1 };

Activation parse_activation(std::string_view name);

struct MlpConfig {
    int input_dim = 2;
    int hidden_dim = 128;
    int num_blocks = 4;
    int num_classes = 2;
    Activation activation = Activation::Relu;
    bool sn_enabled = true;
    double sn_coeff = 1.0;
    int sn_power_iters = 10;
};

// A dense layer y = W x + b. `power_u` is the persistent left singular
// vector estimate used by spectral normalisation.
struct DenseLayer {
    RowMatrix weight;  // out x in
    Vector bias;       // out
    Vector power_u;    // out
};

struct ForwardResult {
    RowMatrix features;  // batch x hidden_dim
    RowMatrix logits;    // batch x num_classes
};

// Gradients laid out like SnMlp::layers().
struct Gradients {
    double loss = 0.0;
    std::vector<DenseLayer> layers;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Residual MLP:
//
//   h0 = act(W_in x + b_in)
//   hk = h(k-1) + act(Wk h(k-1) + bk),  k = 1..num_blocks
//   logits = W_out h_last + b_out
//
// With spectral normalisation enabled the input and block matrices are kept
// at spectral norm <= sn_coeff. The classifier is left unconstrained since
// it does not touch the features.
class SnMlp {
public:
    SnMlp(const MlpConfig& config, std::uint64_t seed);

    // All weights and biases zero; power vectors still seeded.
    static SnMlp zeros(const MlpConfig& config, std::uint64_t seed = 0);

    const MlpConfig& config() const noexcept { return config_; }
    int feature_dim() const noexcept { return config_.hidden_dim; }

    // Layer order: input, blocks 1..num_blocks, classifier.
    std::vector<DenseLayer>& layers() noexcept { return layers_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    std::size_t classifier_index() const noexcept { return layers_.size() - 1; }
    // Layers subject to spectral normalisation (all but the classifier).
    std::size_t normalized_layer_count() const noexcept { return layers_.size() - 1; }

    ForwardResult forward(const RowMatrix& inputs) const;
    RowMatrix features(const RowMatrix& inputs) const { return forward(inputs).features; }

    // Mean softmax cross-entropy over the batch and its gradient.
    Gradients loss_and_gradients(const RowMatrix& inputs, std::span<const int> labels) const;
    double loss(const RowMatrix& inputs, std::span<const int> labels) const;

    // Rescales every normalised layer to spectral norm <= sn_coeff using
    // sn_power_iters power-iteration steps on the persistent vectors.
    void apply_spectral_normalization();

    void save(const std::filesystem::path& path) const;
    static SnMlp load(const std::filesystem::path& path);

private:
    explicit SnMlp(const MlpConfig& config);

    MlpConfig config_;
    std::vector<DenseLayer> layers_;
};

// Power-iteration estimate of the largest singular value. `u` is updated in
// place and reused across calls; an empty or zero `u` is replaced by the
// all-ones direction.
double estimate_spectral_norm(const RowMatrix& weight, Vector& u, int iters);

// weight * min(1, coeff / sigma_hat). A zero matrix comes back unchanged.
RowMatrix spectral_normalize(const RowMatrix& weight, Vector& u, int iters, double coeff,
                             double* sigma_hat = nullptr);

struct TrainConfig {
    int epochs = 300;
    double learning_rate = 0.005;
    double momentum = 0.9;
    int batch_size = 64;
    std::uint64_t seed = 0;
    bool sn_enabled = true;
    double sn_coeff = 1.0;
    int sn_power_iters = 10;
    int hidden_dim = 128;
    int num_blocks = 4;
    Activation activation = Activation::Relu;
};

struct TrainResult {
    SnMlp model;
    std::vector<double> loss_curve;  // mean per-sample loss of each epoch
};

// Called after each epoch with the 1-based epoch number.
using EpochCallback = std::function<void(int epoch, const SnMlp& model, double mean_loss)>;

// Minibatch SGD with momentum on softmax cross-entropy. When SN is enabled
// the normalised layers are projected after every optimizer step.
TrainResult train(const LabeledDataset2D& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Same, on an arbitrary N x input_dim matrix.
TrainResult train(const RowMatrix& inputs, std::span<const int> labels, int num_classes,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// max over pairs of |f(a) - f(b)| / |a - b| for the feature map f.
double lipschitz_probe(const SnMlp& model,
                       std::span<const std::pair<Vector, Vector>> pairs);

// Upper Lipschitz bound of the feature map for the residual form above,
// given the exact spectral norm of each normalised layer:
// sigma_in * prod_k (1 + sigma_k). Both activations are 1-Lipschitz.
double lipschitz_bound(std::span<const double> layer_spectral_norms);

}  // namespace ipfield
