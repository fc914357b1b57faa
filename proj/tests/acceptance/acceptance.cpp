// Acceptance gate: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "../oracles.hpp"

#include "ipfield/feature_io.hpp"
#include "ipfield/field.hpp"
#include "ipfield/grid.hpp"
#include "ipfield/metrics.hpp"
#include "ipfield/net.hpp"
#include "ipfield/random.hpp"
#include "ipfield/synth_data.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace ipfield;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

RowMatrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
    return m;
}

std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

double largest_singular_value(const RowMatrix& m) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

// --------------------------------------------------------------- criteria

Outcome oracle_equivalence() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double worst = 0.0;
    bool ok = true;
    for (int c = 0; c < 1000; ++c) {
        const auto n = static_cast<Eigen::Index>(1 + rng.below(500));
        const auto d = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto m = static_cast<Eigen::Index>(1 + rng.below(100));
        const double h = rng.uniform(0.01, 2.0);
        // Spread the points so every bandwidth sees non-trivial sums.
        const double spread = h * rng.uniform(0.2, 2.0) / std::sqrt(static_cast<double>(d));
        const RowMatrix ref = gaussian_matrix(n, d, rng, spread);
        const RowMatrix q = gaussian_matrix(m, d, rng, spread);
        const Vector got = IpfField(ref, h).evaluate(q);
        const std::vector<double> want = oracle::naive_psi(ref, q, h);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double scale = std::max(std::abs(want[i]), std::abs(got[i]));
            if (scale > 0) worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
            ok = ok && oracle::close_relative(got[i], want[i], 1e-9);
        }
    }
    const double secs = seconds_since(t0);
    return {ok && secs < 60.0, "1000 cases, worst relative error " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome kernel_identities() {
    Rng rng(1002);
    bool ok = true;
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        const auto d = static_cast<Eigen::Index>(1 + rng.below(16));
        const double h = rng.uniform(0.01, 2.0);
        RowMatrix lone = gaussian_matrix(1, d, rng);
        const Vector at = lone.row(0).transpose();
        ok = ok && IpfField(lone, h).evaluate(std::span<const double>(at.data(), at.size())) == 1.0;

        const double dist = rng.uniform(0.0, 4.0 * h);
        Vector dir(d);
        for (auto& v : dir) v = rng.normal();
        dir.normalize();
        RowMatrix pair(2, d);
        pair.row(0) = at.transpose();
        pair.row(1) = (at + dist * dir).transpose();
        const Vector mid = at + 0.5 * dist * dir;
        const double got = IpfField(pair, h).evaluate(std::span<const double>(mid.data(), mid.size()));
        const double want = std::exp(-dist * dist / (8.0 * h * h));
        const double rel = std::abs(got - want) / want;
        worst = std::max(worst, rel);
        ok = ok && rel <= 1e-12;
    }
    return {ok, "100 lone-point and midpoint cases, worst midpoint error " + fmt(worst)};
}

Outcome gradient_check() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (Activation act : {Activation::Relu, Activation::Tanh}) {
        MlpConfig c{.input_dim = 3, .hidden_dim = 6, .num_blocks = 2, .num_classes = 3, .activation = act};
        SnMlp model(c, 31);
        Rng rng(32);
        const RowMatrix x = gaussian_matrix(12, 3, rng);
        std::vector<int> y(12);
        for (auto& v : y) v = static_cast<int>(rng.below(3));
        const Gradients g = model.loss_and_gradients(x, y);
        const double step = 1e-5;
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            auto probe = [&](double& p, double analytic) {
                const double keep = p;
                p = keep + step;
                const double up = model.loss(x, y);
                p = keep - step;
                const double down = model.loss(x, y);
                p = keep;
                const double numeric = (up - down) / (2 * step);
                worst = std::max(worst, std::abs(analytic - numeric) /
                                            std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
            };
            DenseLayer& layer = model.layers()[l];
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
                probe(layer.weight.data()[i], g.layers[l].weight.data()[i]);
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], g.layers[l].bias[i]);
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-4 && secs < 10.0, "worst relative error " + fmt(worst) + ", " + fmt(secs) + " s"};
}

Outcome sn_bound() {
    // Fixed matrices against the SVD.
    double worst_oracle = 0.0;
    {
        RowMatrix diag = RowMatrix::Zero(2, 2);
        diag(0, 0) = 3.0;
        diag(1, 1) = 1.0;
        Vector u;
        worst_oracle = std::abs(estimate_spectral_norm(diag, u, 20) - 3.0) / 3.0;

        Rng rng(1005);
        RowMatrix positive(128, 128);
        for (Eigen::Index i = 0; i < positive.size(); ++i) positive.data()[i] = rng.uniform();
        Vector up;
        const double sp = estimate_spectral_norm(positive, up, 5);
        const double tp = largest_singular_value(positive);
        worst_oracle = std::max(worst_oracle, std::abs(sp - tp) / tp);

        const RowMatrix gauss = gaussian_matrix(128, 64, rng);
        Vector ug(128);
        for (auto& v : ug) v = rng.normal();
        const double sg = estimate_spectral_norm(gauss, ug, 300);
        const double tg = largest_singular_value(gauss);
        worst_oracle = std::max(worst_oracle, std::abs(sg - tg) / tg);
    }

    // Per-epoch bound during a 50-epoch two-moons run.
    double worst_hat = 0.0;
    double worst_svd = 0.0;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.sn_coeff = 1.0;
    cfg.seed = 5;
    train(make_two_moons(2000, 0.1, 5), cfg, [&](int, const SnMlp& m, double) {
        for (std::size_t l = 0; l < m.normalized_layer_count(); ++l) {
            Vector u = m.layers()[l].power_u;
            worst_hat = std::max(worst_hat, estimate_spectral_norm(m.layers()[l].weight, u, 50));
            worst_svd = std::max(worst_svd, largest_singular_value(m.layers()[l].weight));
        }
    });
    return {worst_hat <= 1.001 && worst_svd <= 1.001 && worst_oracle <= 0.02,
            "max power-iteration sigma " + fmt(worst_hat) + ", max SVD sigma " + fmt(worst_svd) +
                ", worst oracle deviation " + fmt(worst_oracle)};
}

Outcome auroc_correctness() {
    Rng rng(1008);
    bool exact = true, invariant = true;
    for (int c = 0; c < 500; ++c) {
        const std::size_t n = 1 + rng.below(60), m = 1 + rng.below(60);
        // Draw from a small integer pool so ties are common.
        const int pool = 1 + static_cast<int>(rng.below(12));
        std::vector<double> a(n), b(m);
        for (auto& v : a) v = static_cast<double>(rng.below(pool));
        for (auto& v : b) v = static_cast<double>(rng.below(pool)) - 1.0;
        const double got = auroc(a, b);
        exact = exact && got == oracle::pairwise_auroc(a, b);
        std::vector<double> ta(n), tb(m);
        std::transform(a.begin(), a.end(), ta.begin(), [](double v) { return std::exp(0.5 * v) + 3.0; });
        std::transform(b.begin(), b.end(), tb.begin(), [](double v) { return std::exp(0.5 * v) + 3.0; });
        invariant = invariant && auroc(ta, tb) == got;
    }
    return {exact && invariant, std::string("500 tied instances, exact match ") + (exact ? "yes" : "no") +
                                    ", monotone invariance " + (invariant ? "yes" : "no")};
}

Outcome ece_correctness() {
    bool ok = ece(std::vector<double>(50, 1.0), std::vector<bool>(50, true)) == 0.0;
    ok = ok && ece(std::vector<double>(50, 1.0), std::vector<bool>(50, false)) == 1.0;
    Rng rng(1009);
    double worst = 0.0;
    for (int c = 0; c < 500; ++c) {
        const std::size_t n = 1 + rng.below(400);
        const int bins = 1 + static_cast<int>(rng.below(30));
        std::vector<double> conf(n);
        std::vector<bool> correct(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = rng.below(10) == 0 ? static_cast<double>(rng.below(bins + 1)) / bins : rng.uniform();
            correct[i] = rng.uniform() < conf[i];
        }
        worst = std::max(worst, std::abs(ece(conf, correct, bins) - oracle::direct_ece(conf, correct, bins)));
    }
    ok = ok && worst <= 1e-12;
    return {ok, "trivial cases exact, worst deviation over 500 instances " + fmt(worst)};
}

Outcome high_dim_ood() {
    const auto t0 = Clock::now();
    constexpr int kDim = 640, kClusters = 10, kTotal = 5000;
    Rng rng(1010);
    const RowMatrix means = gaussian_matrix(kClusters, kDim, rng, 3.0);
    auto sample = [&](int count, double shift) {
        RowMatrix x(count, kDim);
        for (int i = 0; i < count; ++i) {
            const auto k = static_cast<Eigen::Index>(rng.below(kClusters));
            for (int j = 0; j < kDim; ++j) x(i, j) = means(k, j) + shift + rng.normal();
        }
        return x;
    };
    const RowMatrix id = sample(kTotal, 0.0);
    const RowMatrix ood = sample(1000, 6.0);
    const RowMatrix reference = id.topRows(4000);
    const RowMatrix id_val = id.bottomRows(1000);
    const SweepResult r = sweep_bandwidth(reference, id_val, ood, log_grid(0.01, 1.0, 25));
    const double secs = seconds_since(t0);
    return {r.best_auroc >= 0.99 && secs < 120.0,
            "best h " + fmt(r.best_bandwidth) + ", AUROC " + fmt(r.best_auroc) + ", " + fmt(secs) + " s"};
}

Outcome file_format() {
    const fs::path dir = fs::temp_directory_path() / "ipf_acceptance";
    fs::create_directories(dir);
    Rng rng(1012);
    FeatureMatrix m;
    m.data.resize(37, 11);
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = static_cast<float>(rng.normal());
    m.labels = std::vector<int>(37);
    for (auto& v : *m.labels) v = static_cast<int>(rng.below(10));
    const fs::path good = dir / "good.ipff";
    write_features(m, good);
    const FeatureMatrix back = read_features(good);
    const fs::path again = dir / "again.ipff";
    write_features(back, again);
    auto bytes_of = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    const std::string original = bytes_of(good);
    const bool lossless = back.data == m.data && back.labels == m.labels && bytes_of(again) == original;

    auto code_for = [&](std::string bytes) {
        const fs::path p = dir / "bad.ipff";
        std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
        try {
            read_features(p);
        } catch (const FeatureIoError& e) {
            return static_cast<int>(e.code());
        }
        return -1;
    };
    std::string magic = original, version = original, checksum = original;
    magic[0] = 'X';
    version[4] = 9;
    checksum[100] ^= 0x40;
    const std::string truncated = original.substr(0, original.size() - 5);
    const std::vector<std::pair<int, FeatureIoError::Code>> cases = {
        {code_for(magic), FeatureIoError::Code::BadMagic},
        {code_for(version), FeatureIoError::Code::UnsupportedVersion},
        {code_for(checksum), FeatureIoError::Code::ChecksumMismatch},
        {code_for(truncated), FeatureIoError::Code::Truncated},
    };
    bool distinct = true;
    for (const auto& [got, want] : cases) distinct = distinct && got == static_cast<int>(want);
    fs::remove_all(dir);
    return {lossless && distinct, std::string("round trip lossless ") + (lossless ? "yes" : "no") +
                                      ", corruption classes distinct " + (distinct ? "yes" : "no")};
}

// -------------------------------------------------- trained 2D experiments

constexpr double kFeatureBandwidth = 0.3;

struct Trained {
    LabeledDataset2D data;
    SnMlp model;
    double held_out_accuracy;
    double seconds;
};

Trained train_2d(DatasetKind kind, bool sn) {
    const auto t0 = Clock::now();
    const bool moons = kind == DatasetKind::TwoMoons;
    LabeledDataset2D data = make_dataset(kind, moons ? 2000 : 1200, moons ? 0.1 : 0.08, 0);
    TrainConfig cfg;
    cfg.sn_enabled = sn;
    TrainResult r = train(data, cfg);
    const LabeledDataset2D test = make_dataset(kind, 500, moons ? 0.1 : 0.08, 1000);
    const Predictions p = predict(r.model.forward(test.points).logits);
    const double acc = accuracy(p.labels, test.labels);
    return {std::move(data), std::move(r.model), acc, seconds_since(t0)};
}

UncertaintyGrid feature_grid(const Trained& t, double h) {
    return build_grid(IpfField(t.model.features(t.data.points), h), &t.model, GridMode::FeatureSpace);
}

UncertaintyGrid input_grid(const Trained& t, double h) {
    return build_grid(IpfField(t.data.points, h), nullptr, GridMode::InputSpace);
}

double corner_ratio(const UncertaintyGrid& g, const RowMatrix& points) {
    return mean_psi(g, corner_cells(g)) / mean_psi(g, occupied_cells(g, points));
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](const std::string& name, const Outcome& o) {
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
        failures += o.pass ? 0 : 1;
    };
    auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
        try {
            report(name, fn());
        } catch (const std::exception& e) {
            report(name, {false, std::string("exception: ") + e.what()});
        }
    };

    guarded("ipf_oracle_equivalence", oracle_equivalence);
    guarded("kernel_identities", kernel_identities);
    guarded("gradient_check", gradient_check);
    guarded("sn_bound", sn_bound);
    guarded("auroc_correctness", auroc_correctness);
    guarded("ece_correctness", ece_correctness);
    guarded("high_dim_ood", high_dim_ood);
    guarded("file_format", file_format);

    try {
        const Trained moons = train_2d(DatasetKind::TwoMoons, true);
        const Trained spirals = train_2d(DatasetKind::ThreeSpirals, true);
        const Trained moons_plain = train_2d(DatasetKind::TwoMoons, false);

        guarded("bandwidth_monotonicity", [&] {
            std::string detail = "cells with psi > 0.05 (feature/input):";
            bool ok = true;
            std::size_t last_f = 0, last_i = 0;
            for (double h : {0.2, 0.3, 0.4, 0.5}) {
                const std::size_t f = count_above(feature_grid(moons, h), 0.05);
                const std::size_t i = count_above(input_grid(moons, h), 0.05);
                ok = ok && f >= last_f && i >= last_i;
                last_f = f;
                last_i = i;
                detail += " h=" + fmt(h) + " " + std::to_string(f) + "/" + std::to_string(i);
            }
            return Outcome{ok, detail};
        });

        guarded("pipeline_2d", [&] {
            const double secs = moons.seconds + spirals.seconds;
            const UncertaintyGrid g = feature_grid(moons, kFeatureBandwidth);
            const double manifold = mean_psi(g, occupied_cells(g, moons.data.points));
            const double corners = mean_psi(g, corner_cells(g));
            const double gap = mean_psi(g, moons_gap_cells(g));
            const UncertaintyGrid gs = feature_grid(spirals, kFeatureBandwidth);
            const double s_manifold = mean_psi(gs, occupied_cells(gs, spirals.data.points));
            const double s_corners = mean_psi(gs, corner_cells(gs));
            const bool ok = moons.held_out_accuracy >= 0.99 && spirals.held_out_accuracy >= 0.95 &&
                            manifold >= 10.0 * corners && s_manifold >= 10.0 * s_corners && gap < manifold &&
                            secs < 300.0;
            return Outcome{ok, "accuracy moons " + fmt(moons.held_out_accuracy) + " spirals " +
                                   fmt(spirals.held_out_accuracy) + "; moons psi manifold " + fmt(manifold) +
                                   " corners " + fmt(corners) + " gap " + fmt(gap) + "; spirals manifold " +
                                   fmt(s_manifold) + " corners " + fmt(s_corners) + "; training " + fmt(secs) +
                                   " s"};
        });

        guarded("sn_ablation_direction", [&] {
            const double with_sn = corner_ratio(feature_grid(moons, kFeatureBandwidth), moons.data.points);
            const double without = corner_ratio(feature_grid(moons_plain, kFeatureBandwidth), moons_plain.data.points);
            return Outcome{with_sn < without, "corner/manifold psi ratio with SN " + fmt(with_sn) + ", without SN " +
                                                  fmt(without) + " (h " + fmt(kFeatureBandwidth) + ")"};
        });

        guarded("input_space_parity", [&] {
            const double m = median_partition_agreement(feature_grid(moons, kFeatureBandwidth),
                                                        input_grid(moons, kFeatureBandwidth));
            const double s = median_partition_agreement(feature_grid(spirals, kFeatureBandwidth),
                                                        input_grid(spirals, kFeatureBandwidth));
            return Outcome{m >= 0.7 && s >= 0.7, "cell agreement moons " + fmt(m) + ", spirals " + fmt(s)};
        });
    } catch (const std::exception& e) {
        for (const char* name : {"bandwidth_monotonicity", "pipeline_2d", "sn_ablation_direction", "input_space_parity"})
            report(name, {false, std::string("training failed: ") + e.what()});
    }

    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures;
}
