#include "ipfield/synth_data.hpp"

#include "ipfield/feature_io.hpp"
#include "ipfield/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ipfield {

namespace {

void check_args(int n_per_class, double noise_std) {
    if (n_per_class < 1) throw std::invalid_argument("n_per_class must be >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
        throw std::invalid_argument("noise_std must be finite and >= 0");
}

struct Point {
    double x;
    double y;
};

Point moon_point(int label, double t) {
    if (label == 0) return {std::cos(t), std::sin(t)};
    return {1.0 - std::cos(t), 0.5 - std::sin(t)};
}

Point spiral_point(int label, double t) {
    const double r = spiral::kRadiusScale * t;
    const double angle = t + 2.0 * std::numbers::pi * label / 3.0;
    return {r * std::cos(angle), r * std::sin(angle)};
}

}  // namespace

DatasetKind parse_dataset_kind(std::string_view name) {
    if (name == "moons" || name == "two_moons") return DatasetKind::TwoMoons;
    if (name == "spirals" || name == "three_spirals") return DatasetKind::ThreeSpirals;
    throw std::invalid_argument("unknown dataset '" + std::string(name) + "'");
}

std::string_view to_string(DatasetKind kind) {
    return kind == DatasetKind::TwoMoons ? "moons" : "spirals";
}

// Samples are drawn class by class; for every sample the curve parameter is
// drawn first, then the two noise variates. The noise is drawn even when
// noise_std is 0 so that noisy and noiseless sets share curve parameters.
LabeledDataset2D make_two_moons(int n_per_class, double noise_std, std::uint64_t seed) {
    check_args(n_per_class, noise_std);
    Rng rng(seed);
    LabeledDataset2D out;
    out.num_classes = 2;
    out.points.resize(2 * static_cast<Eigen::Index>(n_per_class), 2);
    out.labels.reserve(2 * static_cast<std::size_t>(n_per_class));
    Eigen::Index row = 0;
    for (int label = 0; label < 2; ++label) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            const double t = std::numbers::pi * rng.uniform();
            const Point p = moon_point(label, t);
            const double nx = rng.normal();
            const double ny = rng.normal();
            out.points(row, 0) = p.x + noise_std * nx;
            out.points(row, 1) = p.y + noise_std * ny;
            out.labels.push_back(label);
        }
    }
    return out;
}

LabeledDataset2D make_three_spirals(int n_per_class, double noise_std, std::uint64_t seed) {
    check_args(n_per_class, noise_std);
    Rng rng(seed);
    LabeledDataset2D out;
    out.num_classes = 3;
    out.points.resize(3 * static_cast<Eigen::Index>(n_per_class), 2);
    out.labels.reserve(3 * static_cast<std::size_t>(n_per_class));
    Eigen::Index row = 0;
    for (int label = 0; label < 3; ++label) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            const double t = rng.uniform(spiral::kTurnStart, spiral::kTurnEnd);
            const Point p = spiral_point(label, t);
            const double nx = rng.normal();
            const double ny = rng.normal();
            out.points(row, 0) = p.x + noise_std * nx;
            out.points(row, 1) = p.y + noise_std * ny;
            out.labels.push_back(label);
        }
    }
    return out;
}

LabeledDataset2D make_dataset(DatasetKind kind, int n_per_class, double noise_std,
                              std::uint64_t seed) {
    return kind == DatasetKind::TwoMoons ? make_two_moons(n_per_class, noise_std, seed)
                                         : make_three_spirals(n_per_class, noise_std, seed);
}

double distance_to_manifold(DatasetKind kind, double x, double y) {
    constexpr int kSteps = 2000;
    double best = std::numeric_limits<double>::infinity();
    const int classes = kind == DatasetKind::TwoMoons ? 2 : 3;
    for (int label = 0; label < classes; ++label) {
        for (int s = 0; s <= kSteps; ++s) {
            const double frac = static_cast<double>(s) / kSteps;
            const Point p = kind == DatasetKind::TwoMoons
                                ? moon_point(label, std::numbers::pi * frac)
                                : spiral_point(label, spiral::kTurnStart +
                                                          frac * (spiral::kTurnEnd -
                                                                  spiral::kTurnStart));
            best = std::min(best, std::hypot(p.x - x, p.y - y));
        }
    }
    return best;
}

RowMatrix make_off_manifold_points(DatasetKind kind, int count, double min_distance,
                                   std::uint64_t seed, const Viewport& view) {
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    Rng rng(seed);
    RowMatrix out(count, 2);
    int filled = 0;
    long attempts = 0;
    const long max_attempts = 1000L * count + 100000L;
    while (filled < count) {
        if (++attempts > max_attempts)
            throw std::invalid_argument("min_distance leaves no room in the viewport");
        const double x = rng.uniform(view.x_min, view.x_max);
        const double y = rng.uniform(view.y_min, view.y_max);
        if (distance_to_manifold(kind, x, y) < min_distance) continue;
        out(filled, 0) = x;
        out(filled, 1) = y;
        ++filled;
    }
    return out;
}

void write_dataset_csv(const LabeledDataset2D& data, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << "x,y,label\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < data.points.rows(); ++i)
        os << data.points(i, 0) << ',' << data.points(i, 1) << ',' << data.labels[i] << '\n';
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

LabeledDataset2D read_dataset_csv(const std::filesystem::path& path) {
    FeatureMatrix m = read_csv_features(path);
    if (m.cols() != 2) throw std::invalid_argument("dataset CSV must have 2 coordinate columns");
    if (!m.labels) throw std::invalid_argument("dataset CSV needs a label column");
    LabeledDataset2D out;
    out.points = std::move(m.data);
    out.labels = std::move(*m.labels);
    int max_label = -1;
    for (int l : out.labels) {
        if (l < 0) throw std::invalid_argument("negative label in dataset CSV");
        max_label = std::max(max_label, l);
    }
    out.num_classes = max_label + 1;
    return out;
}

}  // namespace ipfield
