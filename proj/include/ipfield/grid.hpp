#pragma once

#include "ipfield/field.hpp"
#include "ipfield/matrix.hpp"
#include "ipfield/net.hpp"
#include "ipfield/synth_data.hpp"

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

namespace ipfield {

enum class GridMode { FeatureSpace, InputSpace };

GridMode parse_grid_mode(std::string_view name);
std::string_view to_string(GridMode mode);

inline constexpr int kGridSize = 100;

// psi sampled on a 100 x 100 lattice over the 2D viewport. psi(i, j) is the
// value at (x_values[j], y_values[i]); both axes ascend.
struct UncertaintyGrid {
    std::vector<double> x_values;
    std::vector<double> y_values;
    RowMatrix psi;
    GridMode mode = GridMode::InputSpace;

    // 1 - psi / max(psi); all zeros when the grid maximum is 0.
    RowMatrix uncertainty() const;

    std::size_t cell_count() const { return x_values.size() * y_values.size(); }
    // Flat cell index is row * x_values.size() + col.
    double psi_at(std::size_t cell) const;
};

// `count` evenly spaced values from lo to hi inclusive.
std::vector<double> grid_axis(double lo, double hi, int count);

// Maps every lattice point through `model` (feature space) or uses it as is
// (input space) and evaluates the field there. Feature space needs a model
// with input_dim 2 whose feature width matches the field; input space needs
// a 2-wide field and ignores `model`.
UncertaintyGrid build_grid(const IpfField& field, const SnMlp* model, GridMode mode,
                           const Viewport& view = {}, int size = kGridSize,
                           const EvalOptions& options = {});

// Writes a binary P5 image (row 0 = top = largest y) with pixel
// round(255 * psi / max psi), and a CSV `x,y,psi`.
void render(const UncertaintyGrid& grid, const std::filesystem::path& image_path,
            const std::filesystem::path& csv_path);

std::vector<unsigned char> pixel_values(const UncertaintyGrid& grid);

// Cell whose lattice point is nearest to (x, y), clamped to the viewport.
std::size_t nearest_cell(const UncertaintyGrid& grid, double x, double y);

// Distinct cells that contain at least one of `points` (N x 2).
std::vector<std::size_t> occupied_cells(const UncertaintyGrid& grid, const RowMatrix& points);

std::vector<std::size_t> corner_cells(const UncertaintyGrid& grid);

// Two-moons cells inside the data's bounding box [-1, 2] x [-0.5, 1] that are
// at least `min_distance` from both generating arcs: the empty region the
// two interlocking moons enclose.
std::vector<std::size_t> moons_gap_cells(const UncertaintyGrid& grid, double min_distance = 0.35);

double mean_psi(const UncertaintyGrid& grid, const std::vector<std::size_t>& cells);

// Number of cells with psi strictly above `threshold`.
std::size_t count_above(const UncertaintyGrid& grid, double threshold);

// Fraction of cells on which two grids agree after thresholding each at its
// own median psi.
double median_partition_agreement(const UncertaintyGrid& a, const UncertaintyGrid& b);

}  // namespace ipfield
