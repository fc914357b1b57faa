// ipf: command-line driver for the information potential field experiments.

#include "ipfield/feature_io.hpp"
#include "ipfield/field.hpp"
#include "ipfield/grid.hpp"
#include "ipfield/metrics.hpp"
#include "ipfield/net.hpp"
#include "ipfield/synth_data.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ipfield;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kNumericalError = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string dataset = "moons";
    std::optional<int> n_per_class;
    std::optional<double> noise;
    std::uint64_t seed = 0;
    std::string data;
    int epochs = 300;
    double lr = 0.005;
    double momentum = 0.9;
    int batch_size = 64;
    bool sn = true;
    double sn_coeff = 1.0;
    int sn_iters = 10;
    int hidden_dim = 128;
    int num_blocks = 4;
    std::string activation = "relu";
    std::string bandwidth = "0.3";
    std::string bandwidth_grid;
    double threshold_percentile = kDefaultThresholdPercentile;
    std::string mode = "input";
    std::string ref_features;
    std::string test_id_features;
    std::string test_ood_features;
    std::string checkpoint;
    std::string out;
    int ece_bins = kDefaultEceBins;
    double ood_margin = 0.5;
    int n_val = 1000;
};

int default_n_per_class(DatasetKind kind) { return kind == DatasetKind::TwoMoons ? 2000 : 1200; }
double default_noise(DatasetKind kind) { return kind == DatasetKind::TwoMoons ? 0.1 : 0.08; }

LabeledDataset2D dataset_from(const Options& o, std::uint64_t seed_offset = 0) {
    if (!o.data.empty() && seed_offset == 0) return read_dataset_csv(o.data);
    const DatasetKind kind = parse_dataset_kind(o.dataset);
    return make_dataset(kind, o.n_per_class.value_or(default_n_per_class(kind)),
                        o.noise.value_or(default_noise(kind)), o.seed + seed_offset);
}

// "0.1,0.2,0.5", "lin:lo:hi:count" or "log:lo:hi:count".
std::vector<double> parse_bandwidth_grid(const std::string& text) {
    if (text.empty()) throw UsageError("empty bandwidth grid");
    auto parts_of = [](const std::string& s, char sep) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, sep)) out.push_back(item);
        return out;
    };
    try {
        if (text.rfind("lin:", 0) == 0 || text.rfind("log:", 0) == 0) {
            const auto p = parts_of(text, ':');
            if (p.size() != 4) throw UsageError("grid spec must be lin:lo:hi:count or log:lo:hi:count");
            const double lo = std::stod(p[1]);
            const double hi = std::stod(p[2]);
            const int count = std::stoi(p[3]);
            if (count < 1) throw UsageError("grid count must be >= 1");
            return p[0] == "lin" ? linear_grid(lo, hi, count) : log_grid(lo, hi, count);
        }
        std::vector<double> out;
        for (const auto& item : parts_of(text, ',')) out.push_back(std::stod(item));
        if (out.empty()) throw UsageError("empty bandwidth grid");
        return out;
    } catch (const std::logic_error& e) {
        if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e))
            throw UsageError("cannot parse bandwidth grid '" + text + "'");
        throw;
    }
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

json artifact_entry(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    return {{"path", p.string()}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}};
}

json options_json(const Options& o) {
    json j = {
        {"dataset", o.dataset},
        {"seed", o.seed},
        {"data", o.data},
        {"epochs", o.epochs},
        {"lr", o.lr},
        {"momentum", o.momentum},
        {"batch_size", o.batch_size},
        {"sn", o.sn},
        {"sn_coeff", o.sn_coeff},
        {"sn_iters", o.sn_iters},
        {"hidden_dim", o.hidden_dim},
        {"num_blocks", o.num_blocks},
        {"activation", o.activation},
        {"bandwidth", o.bandwidth},
        {"bandwidth_grid", o.bandwidth_grid},
        {"threshold_percentile", o.threshold_percentile},
        {"mode", o.mode},
        {"ref_features", o.ref_features},
        {"test_id_features", o.test_id_features},
        {"test_ood_features", o.test_ood_features},
        {"checkpoint", o.checkpoint},
        {"out", o.out},
        {"ece_bins", o.ece_bins},
        {"ood_margin", o.ood_margin},
        {"n_val", o.n_val},
    };
    j["n_per_class"] = o.n_per_class ? json(*o.n_per_class) : json(nullptr);
    j["noise"] = o.noise ? json(*o.noise) : json(nullptr);
    return j;
}

void write_manifest(const fs::path& path, const std::string& command, const Options& o,
                    const std::vector<fs::path>& artifacts, json extra = json::object()) {
    json m;
    m["command"] = command;
    m["seed"] = o.seed;
    m["config"] = options_json(o);
    m["artifacts"] = json::array();
    for (const auto& a : artifacts) m["artifacts"].push_back(artifact_entry(a));
    if (!extra.empty()) m["results"] = std::move(extra);
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest " + path.string());
    os << m.dump(2) << '\n';
}

void require_readable(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) throw std::invalid_argument(std::string(flag) + ": no such file " + path);
}

// Creates the output directory up front so that a bad path fails before any
// long computation.
fs::path prepare_out_dir(const std::string& out, const char* fallback) {
    fs::path dir = out.empty() ? fs::path(fallback) : fs::path(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::invalid_argument("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".ipf_write_probe";
    {
        std::ofstream os(probe);
        if (!os) throw std::invalid_argument("output directory is not writable: " + dir.string());
    }
    fs::remove(probe);
    return dir;
}

TrainConfig train_config(const Options& o) {
    TrainConfig c;
    c.epochs = o.epochs;
    c.learning_rate = o.lr;
    c.momentum = o.momentum;
    c.batch_size = o.batch_size;
    c.seed = o.seed;
    c.sn_enabled = o.sn;
    c.sn_coeff = o.sn_coeff;
    c.sn_power_iters = o.sn_iters;
    c.hidden_dim = o.hidden_dim;
    c.num_blocks = o.num_blocks;
    c.activation = parse_activation(o.activation);
    return c;
}

double resolve_bandwidth(const std::string& text, const RowMatrix& reference) {
    if (text == "silverman") return silverman_bandwidth(reference);
    try {
        std::size_t used = 0;
        const double h = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return h;
    } catch (const std::logic_error&) {
        throw UsageError("--bandwidth must be a number or 'silverman', got '" + text + "'");
    }
}

void write_scores(const fs::path& path, const Vector& psi, std::optional<double> threshold) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << (threshold ? "index,psi,is_ood\n" : "index,psi\n") << std::setprecision(17);
    for (Eigen::Index i = 0; i < psi.size(); ++i) {
        os << i << ',' << psi[i];
        if (threshold) os << ',' << (psi[i] < *threshold ? 1 : 0);
        os << '\n';
    }
}

double flag_rate(const Vector& psi, double threshold) {
    return static_cast<double>((psi.array() < threshold).count()) / static_cast<double>(psi.size());
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Options& o) {
    const DatasetKind kind = parse_dataset_kind(o.dataset);
    const fs::path out = o.out.empty() ? fs::path(std::string(to_string(kind)) + ".csv") : fs::path(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const LabeledDataset2D d = make_dataset(kind, o.n_per_class.value_or(default_n_per_class(kind)),
                                            o.noise.value_or(default_noise(kind)), o.seed);
    write_dataset_csv(d, out);
    fs::path manifest = out;
    manifest += ".manifest.json";
    write_manifest(manifest, "gen-data", o, {out}, {{"rows", d.points.rows()}, {"num_classes", d.num_classes}});
    std::cout << "wrote " << d.points.rows() << " points to " << out.string() << '\n';
    return kOk;
}

int cmd_train(const Options& o) {
    if (!o.data.empty()) require_readable(o.data, "--data");
    const fs::path dir = prepare_out_dir(o.out, "run_train");
    const TrainConfig cfg = train_config(o);
    const LabeledDataset2D d = dataset_from(o);

    const TrainResult r = train(d, cfg, [](int epoch, const SnMlp&, double loss) {
        if (epoch == 1 || epoch % 50 == 0) std::cerr << "epoch " << epoch << " loss " << loss << '\n';
    });
    const fs::path ckpt = dir / "model.snml";
    const fs::path losses = dir / "loss.csv";
    r.model.save(ckpt);
    {
        std::ofstream os(losses);
        os << "epoch,loss\n" << std::setprecision(17);
        for (std::size_t e = 0; e < r.loss_curve.size(); ++e) os << e + 1 << ',' << r.loss_curve[e] << '\n';
    }
    const Predictions p = predict(r.model.forward(d.points).logits);
    const double train_acc = accuracy(p.labels, d.labels);
    write_manifest(dir / "manifest.json", "train", o, {ckpt, losses},
                   {{"final_loss", r.loss_curve.back()}, {"train_accuracy", train_acc}});
    std::cout << "final loss " << r.loss_curve.back() << ", train accuracy " << train_acc << '\n';
    return kOk;
}

struct ScoredSet {
    RowMatrix features;
    std::optional<RowMatrix> logits;
    std::optional<std::vector<int>> labels;
};

ScoredSet load_scored(const std::string& path, const std::optional<SnMlp>& model) {
    FeatureMatrix m = load_features(path);
    validate(m);
    ScoredSet s;
    s.labels = std::move(m.labels);
    if (model) {
        ForwardResult f = model->forward(m.data);
        s.features = std::move(f.features);
        s.logits = std::move(f.logits);
    } else {
        s.features = std::move(m.data);
    }
    return s;
}

int cmd_score(const Options& o) {
    require_readable(o.ref_features, "--ref-features");
    require_readable(o.test_id_features, "--test-id-features");
    require_readable(o.test_ood_features, "--test-ood-features");
    if (!o.checkpoint.empty()) require_readable(o.checkpoint, "--checkpoint");
    const fs::path dir = prepare_out_dir(o.out, "run_score");

    std::optional<SnMlp> model;
    if (!o.checkpoint.empty()) model = SnMlp::load(o.checkpoint);
    const ScoredSet ref = load_scored(o.ref_features, model);
    const ScoredSet id = load_scored(o.test_id_features, model);
    const ScoredSet ood = load_scored(o.test_ood_features, model);
    if (id.features.cols() != ref.features.cols() || ood.features.cols() != ref.features.cols())
        throw std::invalid_argument("feature widths differ between reference and test files");

    const double h = resolve_bandwidth(o.bandwidth, ref.features);
    const IpfField field(ref.features, h);
    const double threshold = calibrate_threshold(field, o.threshold_percentile);
    const Vector psi_id = field.evaluate(id.features);
    const Vector psi_ood = field.evaluate(ood.features);

    EvalReport report;
    report.auroc = auroc({psi_id.data(), static_cast<std::size_t>(psi_id.size())},
                         {psi_ood.data(), static_cast<std::size_t>(psi_ood.size())});
    report.n_id = static_cast<std::size_t>(psi_id.size());
    report.n_ood = static_cast<std::size_t>(psi_ood.size());
    report.bandwidth_used = h;
    report.threshold = threshold;
    report.ood_flag_rate_id = flag_rate(psi_id, threshold);
    report.ood_flag_rate_ood = flag_rate(psi_ood, threshold);
    if (id.logits && ood.logits) {
        // Low entropy means in-distribution, so negate before ranking.
        const Vector h_id = -softmax_entropy(*id.logits);
        const Vector h_ood = -softmax_entropy(*ood.logits);
        report.entropy_auroc = auroc({h_id.data(), static_cast<std::size_t>(h_id.size())},
                                     {h_ood.data(), static_cast<std::size_t>(h_ood.size())});
        if (id.labels) {
            const Predictions p = predict(*id.logits);
            report.accuracy = accuracy(p.labels, *id.labels);
            std::vector<bool> correct(p.labels.size());
            for (std::size_t i = 0; i < correct.size(); ++i) correct[i] = p.labels[i] == (*id.labels)[i];
            report.ece = ece(p.confidences, correct, o.ece_bins);
        }
    }

    const fs::path s_id = dir / "scores_id.csv";
    const fs::path s_ood = dir / "scores_ood.csv";
    const fs::path rep = dir / "report.txt";
    write_scores(s_id, psi_id, threshold);
    write_scores(s_ood, psi_ood, threshold);
    write_report(report, rep);
    write_manifest(dir / "manifest.json", "score", o, {s_id, s_ood, rep});
    std::cout << report.to_key_values();
    return kOk;
}

// iD reference, iD validation and OOD validation sets for the 2D datasets:
// fresh draws for validation and off-manifold viewport samples for OOD.
struct SweepSets {
    RowMatrix reference, id_val, ood_val;
};

SweepSets synthetic_sweep_sets(const Options& o, const std::optional<SnMlp>& model) {
    const DatasetKind kind = parse_dataset_kind(o.dataset);
    const LabeledDataset2D train_set = dataset_from(o);
    Options val = o;
    val.n_per_class = std::max(1, o.n_val / (kind == DatasetKind::TwoMoons ? 2 : 3));
    const LabeledDataset2D id_val = dataset_from(val, 1);
    RowMatrix ood = make_off_manifold_points(kind, o.n_val, o.ood_margin, o.seed + 2);
    if (model) return {model->features(train_set.points), model->features(id_val.points), model->features(ood)};
    return {train_set.points, id_val.points, ood};
}

int cmd_sweep(const Options& o) {
    const std::vector<double> grid = parse_bandwidth_grid(o.bandwidth_grid.empty() ? "lin:0.1:1:10" : o.bandwidth_grid);
    const bool from_files = !o.ref_features.empty();
    if (from_files) {
        require_readable(o.ref_features, "--ref-features");
        require_readable(o.test_id_features, "--test-id-features");
        require_readable(o.test_ood_features, "--test-ood-features");
    }
    const GridMode mode = parse_grid_mode(o.mode);
    if (!o.checkpoint.empty()) require_readable(o.checkpoint, "--checkpoint");
    if (!from_files && mode == GridMode::FeatureSpace && o.checkpoint.empty())
        throw UsageError("--mode feature needs --checkpoint");
    const fs::path dir = prepare_out_dir(o.out, "run_sweep");

    std::optional<SnMlp> model;
    if (!o.checkpoint.empty() && (from_files || mode == GridMode::FeatureSpace)) model = SnMlp::load(o.checkpoint);
    SweepSets sets;
    if (from_files) {
        sets.reference = load_scored(o.ref_features, model).features;
        sets.id_val = load_scored(o.test_id_features, model).features;
        sets.ood_val = load_scored(o.test_ood_features, model).features;
    } else {
        sets = synthetic_sweep_sets(o, model);
    }
    const SweepResult r = sweep_bandwidth(sets.reference, sets.id_val, sets.ood_val, grid);

    const fs::path table = dir / "sweep.csv";
    {
        std::ofstream os(table);
        os << "bandwidth,auroc,id_coverage\n" << std::setprecision(17);
        for (const auto& row : r.table) os << row.bandwidth << ',' << row.auroc << ',' << row.id_coverage << '\n';
    }
    write_manifest(dir / "manifest.json", "sweep", o, {table},
                   {{"best_bandwidth", r.best_bandwidth}, {"best_auroc", r.best_auroc}});
    std::cout << "best_bandwidth=" << r.best_bandwidth << "\nbest_auroc=" << r.best_auroc << '\n';
    return kOk;
}

std::string bandwidth_tag(double h) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << h;
    return os.str();
}

int cmd_heatmap(const Options& o) {
    const GridMode mode = parse_grid_mode(o.mode);
    if (!o.data.empty()) require_readable(o.data, "--data");
    if (mode == GridMode::FeatureSpace) {
        if (o.checkpoint.empty()) throw UsageError("--mode feature needs --checkpoint");
        require_readable(o.checkpoint, "--checkpoint");
    }
    std::vector<double> bandwidths;
    if (!o.bandwidth_grid.empty()) bandwidths = parse_bandwidth_grid(o.bandwidth_grid);
    const fs::path dir = prepare_out_dir(o.out, "run_heatmap");

    const LabeledDataset2D d = dataset_from(o);
    std::optional<SnMlp> model;
    RowMatrix reference = d.points;
    if (mode == GridMode::FeatureSpace) {
        model = SnMlp::load(o.checkpoint);
        reference = model->features(d.points);
    }
    if (bandwidths.empty()) bandwidths.push_back(resolve_bandwidth(o.bandwidth, reference));

    std::vector<fs::path> outputs;
    json results = json::array();
    for (double h : bandwidths) {
        const IpfField field(reference, h);
        const UncertaintyGrid g = build_grid(field, model ? &*model : nullptr, mode);
        const std::string stem = "heatmap_" + std::string(to_string(mode)) + "_h" + bandwidth_tag(h);
        const fs::path img = dir / (stem + ".pgm");
        const fs::path csv = dir / (stem + ".csv");
        render(g, img, csv);
        outputs.push_back(img);
        outputs.push_back(csv);
        results.push_back({{"bandwidth", h}, {"cells_above_0.05", count_above(g, 0.05)}});
        std::cout << "wrote " << img.string() << '\n';
    }
    write_manifest(dir / "manifest.json", "heatmap", o, outputs, results);
    return kOk;
}

// ------------------------------------------------------------------ setup

void add_data_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--dataset", o.dataset, "Synthetic dataset")->check(CLI::IsMember({"moons", "spirals"}));
    cmd->add_option("--n-per-class", o.n_per_class, "Samples per class (moons 2000, spirals 1200)");
    cmd->add_option("--noise", o.noise, "Gaussian noise std (moons 0.1, spirals 0.08)");
    cmd->add_option("--seed", o.seed, "Seed for every random draw");
}

void add_train_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", o.lr, "SGD learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--momentum", o.momentum, "SGD momentum")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", o.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    cmd->add_flag("--sn,!--no-sn", o.sn, "Spectral normalisation (default on)");
    cmd->add_option("--sn-coeff", o.sn_coeff, "Spectral norm budget per layer")->check(CLI::PositiveNumber);
    cmd->add_option("--sn-iters", o.sn_iters, "Power iterations per step")->check(CLI::PositiveNumber);
    cmd->add_option("--hidden-dim", o.hidden_dim, "Hidden width")->check(CLI::PositiveNumber);
    cmd->add_option("--num-blocks", o.num_blocks, "Residual blocks")->check(CLI::NonNegativeNumber);
    cmd->add_option("--activation", o.activation, "relu or tanh")->check(CLI::IsMember({"relu", "tanh"}));
}

void add_feature_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--ref-features", o.ref_features, "Reference (training) features, IPFF or CSV");
    cmd->add_option("--test-id-features", o.test_id_features, "In-distribution test features");
    cmd->add_option("--test-ood-features", o.test_ood_features, "Out-of-distribution test features");
    cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint; inputs are mapped through it");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Information potential field uncertainty experiments"};
    app.set_config("--config", "", "TOML/INI file with option defaults (flags take precedence)");
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic 2D dataset as CSV");
    add_data_flags(gen, o);
    gen->add_option("--out", o.out, "Output CSV path");

    auto* tr = app.add_subcommand("train", "Train the residual MLP");
    add_data_flags(tr, o);
    add_train_flags(tr, o);
    tr->add_option("--data", o.data, "Dataset CSV (x,y,label) instead of generating one");
    tr->add_option("--out", o.out, "Output directory");

    auto* sc = app.add_subcommand("score", "Score test features against a fitted field");
    add_feature_flags(sc, o);
    sc->add_option("--bandwidth", o.bandwidth, "Kernel width h, or 'silverman'");
    sc->add_option("--threshold-percentile", o.threshold_percentile, "Percentile of training psi used as threshold")
        ->check(CLI::Range(0.0, 100.0));
    sc->add_option("--ece-bins", o.ece_bins, "ECE bin count")->check(CLI::PositiveNumber);
    sc->add_option("--seed", o.seed, "Recorded in the manifest");
    sc->add_option("--out", o.out, "Output directory");

    auto* sw = app.add_subcommand("sweep", "Pick the bandwidth that maximises AUROC");
    add_feature_flags(sw, o);
    add_data_flags(sw, o);
    sw->add_option("--bandwidth-grid", o.bandwidth_grid, "List a,b,c or lin:lo:hi:n or log:lo:hi:n");
    sw->add_option("--mode", o.mode, "feature or input (synthetic sweeps)")->check(CLI::IsMember({"feature", "input"}));
    sw->add_option("--data", o.data, "Dataset CSV for the reference set");
    sw->add_option("--n-val", o.n_val, "Validation size for synthetic sweeps")->check(CLI::PositiveNumber);
    sw->add_option("--ood-margin", o.ood_margin, "Min distance of synthetic OOD points to the data curves");
    sw->add_option("--out", o.out, "Output directory");

    auto* hm = app.add_subcommand("heatmap", "Render the 100x100 uncertainty map");
    add_data_flags(hm, o);
    hm->add_option("--data", o.data, "Dataset CSV instead of generating one");
    hm->add_option("--mode", o.mode, "feature or input")->check(CLI::IsMember({"feature", "input"}));
    hm->add_option("--checkpoint", o.checkpoint, "Model checkpoint (feature mode)");
    hm->add_option("--bandwidth", o.bandwidth, "Kernel width h, or 'silverman'");
    hm->add_option("--bandwidth-grid", o.bandwidth_grid, "Several bandwidths, one image each");
    hm->add_option("--out", o.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*tr) return cmd_train(o);
        if (*sc) return cmd_score(o);
        if (*sw) return cmd_sweep(o);
        if (*hm) return cmd_heatmap(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}
