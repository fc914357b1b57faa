#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace ipfield {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// N x d block of feature vectors (one row per sample), optionally labelled.
struct FeatureMatrix {
    RowMatrix data;
    std::optional<std::vector<int>> labels;
    std::string source_tag;

    Eigen::Index rows() const { return data.rows(); }
    Eigen::Index cols() const { return data.cols(); }
};

// Throws std::invalid_argument unless m is non-empty, finite and its labels
// (if any) have one entry per row.
void validate(const FeatureMatrix& m);

bool all_finite(const RowMatrix& m);

}  // namespace ipfield
