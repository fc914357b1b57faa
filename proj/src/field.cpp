#include "ipfield/field.hpp"

#include "ipfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace ipfield {

namespace {

// Neumaier-compensated running sum.
struct CompensatedSum {
    double sum = 0.0;
    double correction = 0.0;

    void add(double x) {
        const double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            correction += (sum - t) + x;
        else
            correction += (x - t) + sum;
        sum = t;
    }
    double value() const { return sum + correction; }
};

double squared_distance(const double* a, const double* b, Eigen::Index d) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    Eigen::Index k = 0;
    for (; k + 4 <= d; k += 4) {
        const double d0 = a[k] - b[k];
        const double d1 = a[k + 1] - b[k + 1];
        const double d2 = a[k + 2] - b[k + 2];
        const double d3 = a[k + 3] - b[k + 3];
        s0 += d0 * d0;
        s1 += d1 * d1;
        s2 += d2 * d2;
        s3 += d3 * d3;
    }
    for (; k < d; ++k) {
        const double dk = a[k] - b[k];
        s0 += dk * dk;
    }
    return (s0 + s1) + (s2 + s3);
}

double inverse_two_h_squared(double h) { return 1.0 / (2.0 * h * h); }

void check_bandwidth(double h) {
    if (!(h > 0.0) || !std::isfinite(h))
        throw std::invalid_argument("bandwidth must be finite and > 0, got " + std::to_string(h));
}

void check_reference(const RowMatrix& reference) {
    if (reference.rows() < 1 || reference.cols() < 1)
        throw std::invalid_argument("reference features are empty");
    if (!reference.allFinite()) throw std::invalid_argument("reference features are not finite");
}

void check_queries(const RowMatrix& queries, Eigen::Index dim) {
    if (queries.cols() != dim)
        throw std::invalid_argument("query width " + std::to_string(queries.cols()) +
                                    " does not match reference width " + std::to_string(dim));
    if (!queries.allFinite()) throw std::invalid_argument("queries contain non-finite values");
}

// Walks (query block x reference block) tiles, handing each tile's squared
// distances to `visit(q_begin, q_count, r_begin, r_count, dist)`. Query
// blocks are spread over threads; within a query block the reference
// blocks are visited in ascending order.
template <typename Visitor>
void for_each_tile(const RowMatrix& queries, const RowMatrix& reference,
                   const EvalOptions& options, Visitor&& visit) {
    const Eigen::Index m = queries.rows();
    const Eigen::Index n = reference.rows();
    const Eigen::Index d = reference.cols();
    const Eigen::Index qc = std::max<Eigen::Index>(1, options.query_chunk);
    const Eigen::Index rc = std::max<Eigen::Index>(1, options.reference_chunk);
    const Eigen::Index blocks = (m + qc - 1) / qc;
    if (blocks == 0) return;

    auto worker = [&](Eigen::Index first_block, Eigen::Index stride) {
        std::vector<double> dist(static_cast<std::size_t>(qc * std::min(rc, n)));
        for (Eigen::Index b = first_block; b < blocks; b += stride) {
            const Eigen::Index q0 = b * qc;
            const Eigen::Index qn = std::min(qc, m - q0);
            for (Eigen::Index r0 = 0; r0 < n; r0 += rc) {
                const Eigen::Index rn = std::min(rc, n - r0);
                for (Eigen::Index q = 0; q < qn; ++q) {
                    const double* qrow = queries.data() + (q0 + q) * d;
                    for (Eigen::Index r = 0; r < rn; ++r)
                        dist[q * rn + r] = squared_distance(qrow, reference.data() + (r0 + r) * d, d);
                }
                visit(q0, qn, r0, rn, dist.data());
            }
        }
    };

    unsigned threads = options.threads ? options.threads : std::thread::hardware_concurrency();
    threads = static_cast<unsigned>(std::clamp<Eigen::Index>(threads, 1, blocks));
    if (threads == 1) {
        worker(0, 1);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
}

}  // namespace

IpfField::IpfField(RowMatrix reference, double bandwidth)
    : reference_(std::move(reference)), bandwidth_(bandwidth) {
    check_reference(reference_);
    check_bandwidth(bandwidth_);
}

Vector IpfField::evaluate(const RowMatrix& queries, const EvalOptions& options) const {
    check_queries(queries, dim());
    const double inv = inverse_two_h_squared(bandwidth_);
    std::vector<CompensatedSum> acc(static_cast<std::size_t>(queries.rows()));
    for_each_tile(queries, reference_, options,
                  [&](Eigen::Index q0, Eigen::Index qn, Eigen::Index, Eigen::Index rn,
                      const double* dist) {
                      for (Eigen::Index q = 0; q < qn; ++q) {
                          CompensatedSum& s = acc[static_cast<std::size_t>(q0 + q)];
                          const double* row = dist + q * rn;
                          for (Eigen::Index r = 0; r < rn; ++r) s.add(std::exp(-row[r] * inv));
                      }
                  });
    Vector psi(queries.rows());
    const double n = static_cast<double>(size());
    for (Eigen::Index i = 0; i < psi.size(); ++i) psi[i] = acc[static_cast<std::size_t>(i)].value() / n;
    return psi;
}

double IpfField::evaluate(std::span<const double> query) const {
    if (static_cast<Eigen::Index>(query.size()) != dim())
        throw std::invalid_argument("query width does not match reference width");
    RowMatrix q = Eigen::Map<const RowMatrix>(query.data(), 1, dim());
    return evaluate(q, EvalOptions{.threads = 1})[0];
}

Vector IpfField::evaluate_log(const RowMatrix& queries) const {
    check_queries(queries, dim());
    const double inv = inverse_two_h_squared(bandwidth_);
    const Eigen::Index n = size();
    const Eigen::Index d = dim();
    std::vector<double> exponent(static_cast<std::size_t>(n));
    Vector out(queries.rows());
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        double peak = -std::numeric_limits<double>::infinity();
        for (Eigen::Index r = 0; r < n; ++r) {
            exponent[r] = -squared_distance(queries.data() + q * d, reference_.data() + r * d, d) * inv;
            peak = std::max(peak, exponent[r]);
        }
        CompensatedSum s;
        for (double e : exponent) s.add(std::exp(e - peak));
        out[q] = peak + std::log(s.value()) - std::log(static_cast<double>(n));
    }
    return out;
}

OodDecision decide(const IpfField& field, std::span<const double> query, double threshold) {
    if (!std::isfinite(threshold)) throw std::invalid_argument("threshold must be finite");
    OodDecision out;
    out.score = field.evaluate(query);
    out.threshold = threshold;
    out.is_ood = out.score < threshold;
    return out;
}

double percentile_of(std::vector<double> values, double percentile) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (!(percentile >= 0.0 && percentile <= 100.0))
        throw std::invalid_argument("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double calibrate_threshold(const IpfField& field, double percentile, const EvalOptions& options) {
    if (!(percentile > 0.0 && percentile < 100.0))
        throw std::invalid_argument("percentile must lie strictly inside (0, 100)");
    const Vector psi = field.evaluate(field.reference(), options);
    return percentile_of({psi.data(), psi.data() + psi.size()}, percentile);
}

double silverman_bandwidth(const RowMatrix& features) {
    const Eigen::Index n = features.rows();
    const Eigen::Index d = features.cols();
    if (n < 2) throw std::invalid_argument("Silverman bandwidth needs at least 2 rows");
    if (d < 1) throw std::invalid_argument("Silverman bandwidth needs at least 1 column");
    if (!features.allFinite()) throw std::invalid_argument("features are not finite");
    double spread = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double mean = features.col(j).mean();
        const double ss = (features.col(j).array() - mean).square().sum();
        spread += std::sqrt(ss / static_cast<double>(n - 1));
    }
    spread /= static_cast<double>(d);
    if (!(spread > 0.0)) throw std::invalid_argument("features have zero variance");
    const double dd = static_cast<double>(d);
    return spread * std::pow(4.0 / ((dd + 2.0) * static_cast<double>(n)), 1.0 / (dd + 4.0));
}

SweepResult sweep_bandwidth(const RowMatrix& reference, const RowMatrix& id_val,
                            const RowMatrix& ood_val, std::span<const double> grid,
                            const EvalOptions& options) {
    if (grid.empty()) throw std::invalid_argument("bandwidth grid is empty");
    for (double h : grid) check_bandwidth(h);
    check_reference(reference);
    check_queries(id_val, reference.cols());
    check_queries(ood_val, reference.cols());
    if (id_val.rows() < 1 || ood_val.rows() < 1)
        throw std::invalid_argument("validation sets must be non-empty");

    RowMatrix queries(id_val.rows() + ood_val.rows(), reference.cols());
    queries << id_val, ood_val;
    const std::size_t g = grid.size();
    std::vector<double> inv(g);
    for (std::size_t k = 0; k < g; ++k) inv[k] = inverse_two_h_squared(grid[k]);

    std::vector<CompensatedSum> acc(static_cast<std::size_t>(queries.rows()) * g);
    for_each_tile(queries, reference, options,
                  [&](Eigen::Index q0, Eigen::Index qn, Eigen::Index, Eigen::Index rn,
                      const double* dist) {
                      for (Eigen::Index q = 0; q < qn; ++q) {
                          const double* row = dist + q * rn;
                          CompensatedSum* s = &acc[static_cast<std::size_t>(q0 + q) * g];
                          for (std::size_t k = 0; k < g; ++k)
                              for (Eigen::Index r = 0; r < rn; ++r) s[k].add(std::exp(-row[r] * inv[k]));
                      }
                  });

    const double n = static_cast<double>(reference.rows());
    const auto n_id = static_cast<std::size_t>(id_val.rows());
    const auto n_all = static_cast<std::size_t>(queries.rows());
    SweepResult out;
    out.best_auroc = -1.0;
    std::vector<double> id_scores(n_id), ood_scores(n_all - n_id);
    for (std::size_t k = 0; k < g; ++k) {
        std::size_t covered = 0;
        for (std::size_t q = 0; q < n_all; ++q) {
            const double psi = acc[q * g + k].value() / n;
            if (q < n_id) {
                id_scores[q] = psi;
                covered += psi > kCoverageThreshold ? 1 : 0;
            } else {
                ood_scores[q - n_id] = psi;
            }
        }
        SweepRow row;
        row.bandwidth = grid[k];
        row.auroc = auroc(id_scores, ood_scores);
        row.id_coverage = static_cast<double>(covered) / static_cast<double>(n_id);
        out.table.push_back(row);
        if (row.auroc > out.best_auroc ||
            (row.auroc == out.best_auroc && row.bandwidth < out.best_bandwidth)) {
            out.best_auroc = row.auroc;
            out.best_bandwidth = row.bandwidth;
        }
    }
    return out;
}

std::vector<double> linear_grid(double lo, double hi, int count) {
    if (count < 1) throw std::invalid_argument("grid needs at least one point");
    if (count == 1) return {lo};
    std::vector<double> out(static_cast<std::size_t>(count));
    const double step = (hi - lo) / (count - 1);
    for (int i = 0; i < count; ++i) out[i] = lo + step * i;
    out.back() = hi;
    return out;
}

std::vector<double> log_grid(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi > 0.0)) throw std::invalid_argument("log grid bounds must be > 0");
    std::vector<double> out = linear_grid(std::log(lo), std::log(hi), count);
    for (double& v : out) v = std::exp(v);
    if (count > 1) {
        out.front() = lo;
        out.back() = hi;
    }
    return out;
}

}  // namespace ipfield
