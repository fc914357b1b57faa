#pragma once

#include "ipfield/matrix.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ipfield {

// P(id > ood) + P(id == ood) / 2 over all (id, ood) pairs, computed from
// average ranks in O(n log n). iD is the positive class: higher scores are
// expected for in-distribution samples.
double auroc(std::span<const double> scores_id, std::span<const double> scores_ood);

inline constexpr int kDefaultEceBins = 15;

// Equal-width confidence bins over [0, 1]; the last bin is closed.
// ECE = sum_b |b|/n * |acc(b) - conf(b)|.
double ece(std::span<const double> confidences, const std::vector<bool>& correct,
           int num_bins = kDefaultEceBins);

double accuracy(std::span<const int> predictions, std::span<const int> truth);

// Row-wise softmax with max shift.
RowMatrix softmax(const RowMatrix& logits);

// Shannon entropy (nats) of each row's softmax, in [0, ln C].
Vector softmax_entropy(const RowMatrix& logits);

// Arg-max class and its softmax probability per row.
struct Predictions {
    std::vector<int> labels;
    std::vector<double> confidences;
};
Predictions predict(const RowMatrix& logits);

struct EvalReport {
    std::optional<double> accuracy;
    std::optional<double> ece;
    double auroc = 0.0;
    std::optional<double> entropy_auroc;  // softmax-entropy baseline, when logits exist
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    double bandwidth_used = 0.0;
    std::optional<double> threshold;
    std::optional<double> ood_flag_rate_id;
    std::optional<double> ood_flag_rate_ood;

    // One `metric=value` line per populated field.
    std::string to_key_values() const;
    static EvalReport from_key_values(const std::string& text);
};

void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace ipfield
