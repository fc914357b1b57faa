#include "ipfield/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <stdexcept>
#include <string>

namespace ipfield {

GridMode parse_grid_mode(std::string_view name) {
    if (name == "feature") return GridMode::FeatureSpace;
    if (name == "input") return GridMode::InputSpace;
    throw std::invalid_argument("unknown grid mode '" + std::string(name) + "'");
}

std::string_view to_string(GridMode mode) {
    return mode == GridMode::FeatureSpace ? "feature" : "input";
}

std::vector<double> grid_axis(double lo, double hi, int count) {
    if (count < 2) throw std::invalid_argument("grid axis needs at least 2 points");
    const double step = (hi - lo) / (count - 1);
    std::vector<double> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out[i] = lo + step * i;
    return out;
}

RowMatrix UncertaintyGrid::uncertainty() const {
    const double peak = psi.maxCoeff();
    if (!(peak > 0.0)) return RowMatrix::Zero(psi.rows(), psi.cols());
    return (1.0 - psi.array() / peak).matrix();
}

double UncertaintyGrid::psi_at(std::size_t cell) const {
    const auto w = x_values.size();
    return psi(static_cast<Eigen::Index>(cell / w), static_cast<Eigen::Index>(cell % w));
}

UncertaintyGrid build_grid(const IpfField& field, const SnMlp* model, GridMode mode,
                           const Viewport& view, int size, const EvalOptions& options) {
    UncertaintyGrid grid;
    grid.mode = mode;
    grid.x_values = grid_axis(view.x_min, view.x_max, size);
    grid.y_values = grid_axis(view.y_min, view.y_max, size);

    RowMatrix points(static_cast<Eigen::Index>(size) * size, 2);
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            points(i * size + j, 0) = grid.x_values[j];
            points(i * size + j, 1) = grid.y_values[i];
        }
    }

    Vector psi;
    if (mode == GridMode::FeatureSpace) {
        if (!model) throw std::invalid_argument("feature-space grid needs a model");
        if (model->config().input_dim != 2)
            throw std::invalid_argument("feature-space grid needs a model with input_dim 2");
        if (model->feature_dim() != field.dim())
            throw std::invalid_argument("model feature width " + std::to_string(model->feature_dim()) +
                                        " does not match field width " + std::to_string(field.dim()));
        psi = field.evaluate(model->features(points), options);
    } else {
        if (field.dim() != 2)
            throw std::invalid_argument("input-space grid needs a 2-wide field, got width " +
                                        std::to_string(field.dim()));
        psi = field.evaluate(points, options);
    }
    grid.psi = Eigen::Map<const RowMatrix>(psi.data(), size, size);
    if (!grid.psi.allFinite()) throw std::runtime_error("grid evaluation produced non-finite values");
    return grid;
}

std::vector<unsigned char> pixel_values(const UncertaintyGrid& grid) {
    const RowMatrix u = grid.uncertainty();
    const Eigen::Index rows = u.rows();
    const Eigen::Index cols = u.cols();
    std::vector<unsigned char> pixels(static_cast<std::size_t>(rows * cols));
    // Image row 0 is the top of the viewport, i.e. the largest y.
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index src = rows - 1 - r;
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double v = std::round(255.0 * (1.0 - u(src, c)));
            pixels[static_cast<std::size_t>(r * cols + c)] =
                static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
        }
    }
    return pixels;
}

void render(const UncertaintyGrid& grid, const std::filesystem::path& image_path,
            const std::filesystem::path& csv_path) {
    if (grid.psi.rows() != static_cast<Eigen::Index>(grid.y_values.size()) ||
        grid.psi.cols() != static_cast<Eigen::Index>(grid.x_values.size()) || !grid.psi.allFinite())
        throw std::invalid_argument("grid is malformed");
    const std::vector<unsigned char> pixels = pixel_values(grid);
    {
        std::ofstream os(image_path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + image_path.string() + " for writing");
        os << "P5\n" << grid.x_values.size() << ' ' << grid.y_values.size() << "\n255\n";
        os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        if (!os) throw std::runtime_error("write failed: " + image_path.string());
    }
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + csv_path.string() + " for writing");
    os << "x,y,psi\n" << std::setprecision(17);
    for (std::size_t i = 0; i < grid.y_values.size(); ++i)
        for (std::size_t j = 0; j < grid.x_values.size(); ++j)
            os << grid.x_values[j] << ',' << grid.y_values[i] << ','
               << grid.psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
    if (!os) throw std::runtime_error("write failed: " + csv_path.string());
}

std::size_t nearest_cell(const UncertaintyGrid& grid, double x, double y) {
    auto index = [](const std::vector<double>& axis, double v) {
        const double step = (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1);
        const double pos = std::round((v - axis.front()) / step);
        return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(axis.size() - 1)));
    };
    return index(grid.y_values, y) * grid.x_values.size() + index(grid.x_values, x);
}

std::vector<std::size_t> occupied_cells(const UncertaintyGrid& grid, const RowMatrix& points) {
    if (points.cols() != 2) throw std::invalid_argument("points must be N x 2");
    std::set<std::size_t> cells;
    for (Eigen::Index i = 0; i < points.rows(); ++i) cells.insert(nearest_cell(grid, points(i, 0), points(i, 1)));
    return {cells.begin(), cells.end()};
}

std::vector<std::size_t> corner_cells(const UncertaintyGrid& grid) {
    const std::size_t w = grid.x_values.size();
    const std::size_t h = grid.y_values.size();
    return {0, w - 1, (h - 1) * w, h * w - 1};
}

std::vector<std::size_t> moons_gap_cells(const UncertaintyGrid& grid, double min_distance) {
    std::vector<std::size_t> cells;
    const std::size_t w = grid.x_values.size();
    for (std::size_t i = 0; i < grid.y_values.size(); ++i) {
        const double y = grid.y_values[i];
        if (y < -0.5 || y > 1.0) continue;
        for (std::size_t j = 0; j < w; ++j) {
            const double x = grid.x_values[j];
            if (x < -1.0 || x > 2.0) continue;
            if (distance_to_manifold(DatasetKind::TwoMoons, x, y) >= min_distance) cells.push_back(i * w + j);
        }
    }
    return cells;
}

double mean_psi(const UncertaintyGrid& grid, const std::vector<std::size_t>& cells) {
    if (cells.empty()) throw std::invalid_argument("no cells to average");
    double total = 0.0;
    for (std::size_t c : cells) total += grid.psi_at(c);
    return total / static_cast<double>(cells.size());
}

std::size_t count_above(const UncertaintyGrid& grid, double threshold) {
    return static_cast<std::size_t>((grid.psi.array() > threshold).count());
}

double median_partition_agreement(const UncertaintyGrid& a, const UncertaintyGrid& b) {
    if (a.psi.rows() != b.psi.rows() || a.psi.cols() != b.psi.cols())
        throw std::invalid_argument("grids differ in shape");
    auto median = [](const RowMatrix& m) {
        return percentile_of({m.data(), m.data() + m.size()}, 50.0);
    };
    const double ma = median(a.psi);
    const double mb = median(b.psi);
    Eigen::Index agree = 0;
    for (Eigen::Index i = 0; i < a.psi.size(); ++i)
        agree += ((a.psi.data()[i] > ma) == (b.psi.data()[i] > mb)) ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(a.psi.size());
}

}  // namespace ipfield
