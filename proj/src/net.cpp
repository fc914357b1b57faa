#include "ipfield/net.hpp"

#include "ipfield/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

namespace ipfield {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'N', 'M', 'L'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kPowerWarmupIters = 200;

void check_config(const MlpConfig& c) {
    if (c.input_dim < 1 || c.hidden_dim < 1 || c.num_blocks < 0 || c.num_classes < 1)
        throw std::invalid_argument("invalid network dimensions");
    if (!(c.sn_coeff > 0.0)) throw std::invalid_argument("sn_coeff must be > 0");
    if (c.sn_power_iters < 1) throw std::invalid_argument("sn_power_iters must be >= 1");
}

RowMatrix activate(const RowMatrix& z, Activation act) {
    if (act == Activation::Relu) return z.cwiseMax(0.0);
    return z.array().tanh().matrix();
}

// Derivative of the activation evaluated at pre-activation z.
RowMatrix activation_slope(const RowMatrix& z, Activation act) {
    if (act == Activation::Relu) return (z.array() > 0.0).cast<double>().matrix();
    return (1.0 - z.array().tanh().square()).matrix();
}

RowMatrix affine(const RowMatrix& x, const DenseLayer& layer) {
    RowMatrix z = x * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    return z;
}

Vector random_unit(Eigen::Index n, Rng& rng) {
    Vector u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[i] = rng.normal();
    const double norm = u.norm();
    if (norm > 0.0) u /= norm;
    return u;
}

struct ForwardCache {
    std::vector<RowMatrix> pre;     // pre-activations of input + block layers
    std::vector<RowMatrix> hidden;  // h0 .. h_last
    RowMatrix logits;
};

class ByteWriter {
public:
    template <typename T>
    void put(T value) {
        static_assert(std::is_integral_v<T>);
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<char>(u >> (8 * i)));
    }
    void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
    void put_matrix(const RowMatrix& m) {
        put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(m.data()[i]);
    }
    void put_vector(const Vector& v) {
        put<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
        put<std::uint64_t>(1);
        for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(v[i]);
    }
    std::vector<char> bytes;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    template <typename T>
    T get() {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T));
        using U = std::make_unsigned_t<T>;
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    RowMatrix get_matrix(Eigen::Index rows, Eigen::Index cols) {
        const auto r = get<std::uint64_t>();
        const auto c = get<std::uint64_t>();
        if (r != static_cast<std::uint64_t>(rows) || c != static_cast<std::uint64_t>(cols))
            throw CheckpointError("checkpoint matrix shape does not match architecture");
        RowMatrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f64();
        return m;
    }
    Vector get_vector(Eigen::Index n) {
        RowMatrix m = get_matrix(n, 1);
        return Eigen::Map<Vector>(m.data(), n);
    }
    bool done() const { return pos_ == bytes_.size(); }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
    }
    const char* cursor() const { return bytes_.data() + pos_; }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
};

ForwardCache run_forward(const SnMlp& model, const RowMatrix& x) {
    const MlpConfig& c = model.config();
    if (x.cols() != c.input_dim)
        throw std::invalid_argument("input width " + std::to_string(x.cols()) +
                                    " does not match model input_dim " + std::to_string(c.input_dim));
    const auto& layers = model.layers();
    ForwardCache cache;
    cache.pre.reserve(layers.size() - 1);
    cache.hidden.reserve(layers.size() - 1);
    cache.pre.push_back(affine(x, layers[0]));
    cache.hidden.push_back(activate(cache.pre.back(), c.activation));
    for (int k = 1; k <= c.num_blocks; ++k) {
        cache.pre.push_back(affine(cache.hidden.back(), layers[k]));
        cache.hidden.push_back(cache.hidden.back() + activate(cache.pre.back(), c.activation));
    }
    cache.logits = affine(cache.hidden.back(), layers[model.classifier_index()]);
    return cache;
}

// Mean cross-entropy and d(loss)/d(logits).
double cross_entropy(const RowMatrix& logits, std::span<const int> labels, RowMatrix* grad) {
    const Eigen::Index b = logits.rows();
    double total = 0.0;
    if (grad) grad->resize(b, logits.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double peak = logits.row(i).maxCoeff();
        const Eigen::ArrayXd e = (logits.row(i).array() - peak).exp();
        const double z = e.sum();
        total += std::log(z) - (logits(i, y) - peak);
        if (grad) {
            grad->row(i) = (e / z).matrix().transpose();
            (*grad)(i, y) -= 1.0;
        }
    }
    if (grad) *grad /= static_cast<double>(b);
    return total / static_cast<double>(b);
}

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes) {
    if (static_cast<Eigen::Index>(labels.size()) != rows)
        throw std::invalid_argument("label count does not match input rows");
    for (int y : labels)
        if (y < 0 || y >= num_classes)
            throw std::invalid_argument("label " + std::to_string(y) + " outside [0, num_classes)");
}

}  // namespace

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

SnMlp::SnMlp(const MlpConfig& config) : config_(config) { check_config(config_); }

SnMlp::SnMlp(const MlpConfig& config, std::uint64_t seed) : SnMlp(config) {
    Rng rng(seed);
    auto make = [&](int out, int in) {
        // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        DenseLayer layer;
        layer.weight.resize(out, in);
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
            layer.weight.data()[i] = rng.uniform(-bound, bound);
        layer.bias.resize(out);
        for (Eigen::Index i = 0; i < out; ++i) layer.bias[i] = rng.uniform(-bound, bound);
        layer.power_u = random_unit(out, rng);
        return layer;
    };
    layers_.push_back(make(config_.hidden_dim, config_.input_dim));
    for (int k = 0; k < config_.num_blocks; ++k)
        layers_.push_back(make(config_.hidden_dim, config_.hidden_dim));
    layers_.push_back(make(config_.num_classes, config_.hidden_dim));
}

SnMlp SnMlp::zeros(const MlpConfig& config, std::uint64_t seed) {
    SnMlp model(config, seed);
    for (DenseLayer& layer : model.layers_) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    return model;
}

ForwardResult SnMlp::forward(const RowMatrix& inputs) const {
    ForwardCache cache = run_forward(*this, inputs);
    return {std::move(cache.hidden.back()), std::move(cache.logits)};
}

double SnMlp::loss(const RowMatrix& inputs, std::span<const int> labels) const {
    check_labels(labels, inputs.rows(), config_.num_classes);
    return cross_entropy(forward(inputs).logits, labels, nullptr);
}

Gradients SnMlp::loss_and_gradients(const RowMatrix& inputs, std::span<const int> labels) const {
    check_labels(labels, inputs.rows(), config_.num_classes);
    if (inputs.rows() == 0) throw std::invalid_argument("empty batch");
    const ForwardCache cache = run_forward(*this, inputs);

    Gradients g;
    g.layers.resize(layers_.size());
    RowMatrix d_logits;
    g.loss = cross_entropy(cache.logits, labels, &d_logits);

    const std::size_t out = classifier_index();
    g.layers[out].weight = d_logits.transpose() * cache.hidden.back();
    g.layers[out].bias = d_logits.colwise().sum().transpose();
    RowMatrix d_hidden = d_logits * layers_[out].weight;

    for (int k = config_.num_blocks; k >= 1; --k) {
        const RowMatrix d_pre =
            d_hidden.cwiseProduct(activation_slope(cache.pre[k], config_.activation));
        g.layers[k].weight = d_pre.transpose() * cache.hidden[k - 1];
        g.layers[k].bias = d_pre.colwise().sum().transpose();
        d_hidden += d_pre * layers_[k].weight;
    }
    const RowMatrix d_pre = d_hidden.cwiseProduct(activation_slope(cache.pre[0], config_.activation));
    g.layers[0].weight = d_pre.transpose() * inputs;
    g.layers[0].bias = d_pre.colwise().sum().transpose();
    return g;
}

void SnMlp::apply_spectral_normalization() {
    for (std::size_t i = 0; i < normalized_layer_count(); ++i) {
        DenseLayer& layer = layers_[i];
        layer.weight = spectral_normalize(layer.weight, layer.power_u, config_.sn_power_iters,
                                          config_.sn_coeff);
    }
}

void SnMlp::save(const std::filesystem::path& path) const {
    ByteWriter w;
    w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.input_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.hidden_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.num_blocks));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.num_classes));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.activation));
    w.put<std::uint32_t>(config_.sn_enabled ? 1u : 0u);
    w.put_f64(config_.sn_coeff);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(config_.sn_power_iters));
    for (const DenseLayer& layer : layers_) {
        w.put_matrix(layer.weight);
        w.put_vector(layer.bias);
        w.put_vector(layer.power_u);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

SnMlp SnMlp::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    ByteReader r({std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()});
    r.need(sizeof(kCheckpointMagic));
    if (std::memcmp(r.cursor(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw CheckpointError(path.string() + ": not an SNML checkpoint");
    r.skip(sizeof(kCheckpointMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                              std::to_string(version));
    MlpConfig c;
    c.input_dim = static_cast<int>(r.get<std::uint32_t>());
    c.hidden_dim = static_cast<int>(r.get<std::uint32_t>());
    c.num_blocks = static_cast<int>(r.get<std::uint32_t>());
    c.num_classes = static_cast<int>(r.get<std::uint32_t>());
    const auto act = r.get<std::uint32_t>();
    if (act > 1) throw CheckpointError("unknown activation code in checkpoint");
    c.activation = static_cast<Activation>(act);
    c.sn_enabled = r.get<std::uint32_t>() != 0;
    c.sn_coeff = r.get_f64();
    c.sn_power_iters = static_cast<int>(r.get<std::uint32_t>());
    if (c.input_dim > (1 << 24) || c.hidden_dim > (1 << 24) || c.num_blocks > 4096 ||
        c.num_classes > (1 << 24))
        throw CheckpointError("implausible architecture in checkpoint");
    try {
        check_config(c);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
    }

    SnMlp model(c);
    auto read_layer = [&](int out, int in) {
        DenseLayer layer;
        layer.weight = r.get_matrix(out, in);
        layer.bias = r.get_vector(out);
        layer.power_u = r.get_vector(out);
        return layer;
    };
    model.layers_.push_back(read_layer(c.hidden_dim, c.input_dim));
    for (int k = 0; k < c.num_blocks; ++k) model.layers_.push_back(read_layer(c.hidden_dim, c.hidden_dim));
    model.layers_.push_back(read_layer(c.num_classes, c.hidden_dim));
    if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
    return model;
}

double estimate_spectral_norm(const RowMatrix& weight, Vector& u, int iters) {
    if (iters < 1) throw std::invalid_argument("power iteration needs iters >= 1");
    if (u.size() != weight.rows() || !(u.norm() > 0.0)) u = Vector::Ones(weight.rows()).normalized();
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vector v = weight.transpose() * u;
        const double vn = v.norm();
        if (!(vn > 0.0)) return 0.0;
        v /= vn;
        Vector wu = weight * v;
        sigma = wu.norm();
        if (!(sigma > 0.0)) return 0.0;
        u = wu / sigma;
    }
    return sigma;
}

RowMatrix spectral_normalize(const RowMatrix& weight, Vector& u, int iters, double coeff,
                             double* sigma_hat) {
    if (!(coeff > 0.0)) throw std::invalid_argument("coeff must be > 0");
    const double sigma = estimate_spectral_norm(weight, u, iters);
    if (sigma_hat) *sigma_hat = sigma;
    if (sigma <= coeff) return weight;
    return weight * (coeff / sigma);
}

TrainResult train(const LabeledDataset2D& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    return train(dataset.points, dataset.labels, dataset.num_classes, config, on_epoch);
}

TrainResult train(const RowMatrix& inputs, std::span<const int> labels, int num_classes,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    if (inputs.rows() < 1) throw std::invalid_argument("training set is empty");
    if (config.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (config.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(config.momentum >= 0.0)) throw std::invalid_argument("momentum must be >= 0");
    if (!inputs.allFinite()) throw std::invalid_argument("training inputs are not finite");
    check_labels(labels, inputs.rows(), num_classes);

    MlpConfig mc;
    mc.input_dim = static_cast<int>(inputs.cols());
    mc.hidden_dim = config.hidden_dim;
    mc.num_blocks = config.num_blocks;
    mc.num_classes = num_classes;
    mc.activation = config.activation;
    mc.sn_enabled = config.sn_enabled;
    mc.sn_coeff = config.sn_coeff;
    mc.sn_power_iters = config.sn_power_iters;

    // One stream for initialisation, one for shuffling.
    Rng seeder(config.seed);
    SnMlp model(mc, seeder.next_u64());
    Rng shuffle_rng(seeder.next_u64());
    if (mc.sn_enabled) {
        // Converge the persistent vectors on the initial weights; afterwards
        // sn_power_iters steps per update are enough to track them.
        for (std::size_t l = 0; l < model.normalized_layer_count(); ++l) {
            DenseLayer& layer = model.layers()[l];
            estimate_spectral_norm(layer.weight, layer.power_u, kPowerWarmupIters);
        }
        model.apply_spectral_normalization();
    }

    std::vector<DenseLayer> velocity(model.layers().size());
    for (std::size_t i = 0; i < velocity.size(); ++i) {
        velocity[i].weight = RowMatrix::Zero(model.layers()[i].weight.rows(), model.layers()[i].weight.cols());
        velocity[i].bias = Vector::Zero(model.layers()[i].bias.size());
    }

    const auto n = static_cast<std::size_t>(inputs.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RowMatrix batch;
    std::vector<int> batch_labels;

    TrainResult result{model, {}};
    result.loss_curve.reserve(static_cast<std::size_t>(config.epochs));
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t count = std::min<std::size_t>(config.batch_size, n - start);
            batch.resize(static_cast<Eigen::Index>(count), inputs.cols());
            batch_labels.resize(count);
            for (std::size_t j = 0; j < count; ++j) {
                batch.row(static_cast<Eigen::Index>(j)) = inputs.row(static_cast<Eigen::Index>(order[start + j]));
                batch_labels[j] = labels[order[start + j]];
            }
            const Gradients g = model.loss_and_gradients(batch, batch_labels);
            if (!std::isfinite(g.loss))
                throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) +
                                     "; the learning rate is probably too high");
            epoch_loss += g.loss * static_cast<double>(count);
            for (std::size_t l = 0; l < velocity.size(); ++l) {
                DenseLayer& v = velocity[l];
                DenseLayer& p = model.layers()[l];
                v.weight = config.momentum * v.weight + g.layers[l].weight;
                v.bias = config.momentum * v.bias + g.layers[l].bias;
                p.weight -= config.learning_rate * v.weight;
                p.bias -= config.learning_rate * v.bias;
            }
            if (mc.sn_enabled) model.apply_spectral_normalization();
        }
        epoch_loss /= static_cast<double>(n);
        result.loss_curve.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, model, epoch_loss);
    }
    result.model = std::move(model);
    return result;
}

double lipschitz_probe(const SnMlp& model, std::span<const std::pair<Vector, Vector>> pairs) {
    if (pairs.empty()) throw std::invalid_argument("no input pairs to probe");
    const Eigen::Index d = model.config().input_dim;
    RowMatrix a(static_cast<Eigen::Index>(pairs.size()), d);
    RowMatrix b(static_cast<Eigen::Index>(pairs.size()), d);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].first.size() != d || pairs[i].second.size() != d)
            throw std::invalid_argument("probe pair width does not match model input_dim");
        a.row(static_cast<Eigen::Index>(i)) = pairs[i].first.transpose();
        b.row(static_cast<Eigen::Index>(i)) = pairs[i].second.transpose();
    }
    const RowMatrix fa = model.features(a);
    const RowMatrix fb = model.features(b);
    double best = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double dx = (a.row(i) - b.row(i)).norm();
        if (!(dx > 0.0)) throw std::invalid_argument("probe pair " + std::to_string(i) + " is coincident");
        best = std::max(best, (fa.row(i) - fb.row(i)).norm() / dx);
    }
    return best;
}

double lipschitz_bound(std::span<const double> layer_spectral_norms) {
    if (layer_spectral_norms.empty()) throw std::invalid_argument("no layers");
    double bound = layer_spectral_norms.front();
    for (std::size_t k = 1; k < layer_spectral_norms.size(); ++k) bound *= 1.0 + layer_spectral_norms[k];
    return bound;
}

}  // namespace ipfield
