#pragma once

#include "ipfield/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace ipfield {

struct LabeledDataset2D {
    RowMatrix points;  // N x 2
    std::vector<int> labels;
    int num_classes = 0;
};

enum class DatasetKind { TwoMoons, ThreeSpirals };

DatasetKind parse_dataset_kind(std::string_view name);
std::string_view to_string(DatasetKind kind);

// Upper arc (cos t, sin t) for class 0, lower arc (1 - cos t, 0.5 - sin t)
// for class 1, t ~ U[0, pi], plus isotropic N(0, noise_std^2).
LabeledDataset2D make_two_moons(int n_per_class, double noise_std, std::uint64_t seed);

// Class k lies on r = a t at angle t + 2 pi k / 3 with t ~ U[t_min, t_max]
// (1.5 turns), plus isotropic N(0, noise_std^2).
LabeledDataset2D make_three_spirals(int n_per_class, double noise_std, std::uint64_t seed);

LabeledDataset2D make_dataset(DatasetKind kind, int n_per_class, double noise_std,
                              std::uint64_t seed);

namespace spiral {
inline constexpr double kTurnStart = 0.6;
inline constexpr double kTurnEnd = 0.6 + 3.0 * 3.14159265358979323846;
inline constexpr double kRadiusScale = 0.24;
}  // namespace spiral

// Viewport of the 2D uncertainty maps.
struct Viewport {
    double x_min = -2.5;
    double x_max = 3.5;
    double y_min = -3.0;
    double y_max = 3.0;
};

// Distance from (x, y) to the nearest noiseless generating curve of `kind`,
// approximated on a dense parameter grid.
double distance_to_manifold(DatasetKind kind, double x, double y);

// Uniform viewport samples whose distance to every generating curve is at
// least `min_distance`. Used as a 2D out-of-distribution set.
RowMatrix make_off_manifold_points(DatasetKind kind, int count, double min_distance,
                                   std::uint64_t seed, const Viewport& view = {});

// CSV with header `x,y,label`, 17 significant digits.
void write_dataset_csv(const LabeledDataset2D& data, const std::filesystem::path& path);
LabeledDataset2D read_dataset_csv(const std::filesystem::path& path);

}  // namespace ipfield
