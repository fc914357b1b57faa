#pragma once

#include "ipfield/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace ipfield {

// Blocking and threading knobs for field evaluation. Each query's sum always
// runs over the reference rows in index order, so the result does not depend
// on either setting.
struct EvalOptions {
    Eigen::Index query_chunk = 64;
    Eigen::Index reference_chunk = 2048;
    unsigned threads = 0;  // 0: std::thread::hardware_concurrency()
};

// Information potential field over a fixed set of reference features:
//
//   psi(z) = (1/N) sum_i exp(-|z - z_i|^2 / (2 h^2))
//
// The Gaussian normalisation constant (2 pi h^2)^(-d/2) is left out, so
// psi lies in (0, 1] (it may underflow to exactly 0 far from the data) and
// values are only comparable at fixed d and h.
class IpfField {
public:
    IpfField(RowMatrix reference, double bandwidth);

    const RowMatrix& reference() const noexcept { return reference_; }
    double bandwidth() const noexcept { return bandwidth_; }
    Eigen::Index size() const noexcept { return reference_.rows(); }
    Eigen::Index dim() const noexcept { return reference_.cols(); }

    // psi for every row of `queries` (M x d).
    Vector evaluate(const RowMatrix& queries, const EvalOptions& options = {}) const;
    double evaluate(std::span<const double> query) const;

    // ln psi through log-sum-exp; finite where evaluate() underflows.
    Vector evaluate_log(const RowMatrix& queries) const;

private:
    RowMatrix reference_;
    double bandwidth_;
};

struct OodDecision {
    double score = 0.0;
    double threshold = 0.0;
    bool is_ood = false;
};

// Out-of-distribution iff psi(query) < threshold.
OodDecision decide(const IpfField& field, std::span<const double> query, double threshold);

inline constexpr double kDefaultThresholdPercentile = 5.0;

// The `percentile`-th percentile (linear interpolation between order
// statistics) of psi over the field's own reference rows.
double calibrate_threshold(const IpfField& field, double percentile,
                           const EvalOptions& options = {});

// Percentile with linear interpolation, percentile in [0, 100].
double percentile_of(std::vector<double> values, double percentile);

// h = s * (4 / ((d + 2) N))^(1 / (d + 4)), s the mean per-column sample
// standard deviation.
double silverman_bandwidth(const RowMatrix& features);

struct SweepRow {
    double bandwidth = 0.0;
    double auroc = 0.0;
    double id_coverage = 0.0;  // fraction of iD validation rows with psi > coverage_threshold
};

struct SweepResult {
    double best_bandwidth = 0.0;
    double best_auroc = 0.0;
    std::vector<SweepRow> table;
};

inline constexpr double kCoverageThreshold = 0.05;

// Scores id_val and ood_val against a field on `reference` for every
// bandwidth in `grid` and keeps the one with the highest AUROC (iD scores
// high); ties go to the smallest bandwidth. Pairwise distances are computed
// once per query block and reused across the grid, and every score equals
// IpfField::evaluate at that bandwidth bit for bit.
SweepResult sweep_bandwidth(const RowMatrix& reference, const RowMatrix& id_val,
                            const RowMatrix& ood_val, std::span<const double> grid,
                            const EvalOptions& options = {});

std::vector<double> linear_grid(double lo, double hi, int count);
std::vector<double> log_grid(double lo, double hi, int count);

}  // namespace ipfield
