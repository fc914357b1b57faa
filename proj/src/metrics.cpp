#include "ipfield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ipfield {

namespace {

void check_scores(std::span<const double> s, const char* what) {
    if (s.empty()) throw std::invalid_argument(std::string(what) + " scores are empty");
    for (double v : s)
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + " scores contain non-finite values");
}

}  // namespace

double auroc(std::span<const double> scores_id, std::span<const double> scores_ood) {
    check_scores(scores_id, "iD");
    check_scores(scores_ood, "OOD");
    const std::size_t n1 = scores_id.size();
    const std::size_t n = n1 + scores_ood.size();

    std::vector<std::pair<double, bool>> all;
    all.reserve(n);
    for (double s : scores_id) all.emplace_back(s, true);
    for (double s : scores_ood) all.emplace_back(s, false);
    std::sort(all.begin(), all.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Ranks are 1-based; a tie group spanning positions [i, j) gets the
    // average rank (i + 1 + j) / 2, a half-integer, so the sum stays exact.
    double id_rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && all[j].first == all[i].first) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (all[k].second) id_rank_sum += avg_rank;
        i = j;
    }
    const double u = id_rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
    return u / (static_cast<double>(n1) * static_cast<double>(scores_ood.size()));
}

double ece(std::span<const double> confidences, const std::vector<bool>& correct, int num_bins) {
    if (confidences.size() != correct.size())
        throw std::invalid_argument("confidences and correctness flags differ in length");
    if (confidences.empty()) throw std::invalid_argument("ECE of an empty sample");
    if (num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");

    std::vector<double> conf_sum(num_bins, 0.0);
    std::vector<double> hits(num_bins, 0.0);
    std::vector<std::size_t> count(num_bins, 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0))
            throw std::invalid_argument("confidence outside [0, 1]: " + std::to_string(c));
        int b = std::min(num_bins - 1, static_cast<int>(c * num_bins));
        // c * num_bins can round across an edge; settle against b / num_bins.
        if (b > 0 && c < static_cast<double>(b) / num_bins) --b;
        if (b + 1 < num_bins && c >= static_cast<double>(b + 1) / num_bins) ++b;
        conf_sum[b] += c;
        hits[b] += correct[i] ? 1.0 : 0.0;
        ++count[b];
    }
    const double n = static_cast<double>(confidences.size());
    double total = 0.0;
    for (int b = 0; b < num_bins; ++b) {
        if (count[b] == 0) continue;
        const double m = static_cast<double>(count[b]);
        total += (m / n) * std::abs(hits[b] / m - conf_sum[b] / m);
    }
    return total;
}

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
    if (predictions.size() != truth.size())
        throw std::invalid_argument("predictions and truth differ in length");
    if (predictions.empty()) throw std::invalid_argument("accuracy of an empty sample");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

RowMatrix softmax(const RowMatrix& logits) {
    if (!logits.allFinite()) throw std::invalid_argument("logits contain non-finite values");
    RowMatrix p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double peak = logits.row(i).maxCoeff();
        p.row(i) = (logits.row(i).array() - peak).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

Vector softmax_entropy(const RowMatrix& logits) {
    if (logits.cols() < 2) throw std::invalid_argument("entropy needs at least 2 classes");
    if (!logits.allFinite()) throw std::invalid_argument("logits contain non-finite values");
    Vector h(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        // H = log Z - sum p_j s_j with s = logits - max and Z = sum exp(s).
        const Eigen::ArrayXd s = logits.row(i).array() - logits.row(i).maxCoeff();
        const Eigen::ArrayXd e = s.exp();
        const double z = e.sum();
        const double value = std::log(z) - (e * s).sum() / z;
        h[i] = std::clamp(value, 0.0, std::log(static_cast<double>(logits.cols())));
    }
    return h;
}

Predictions predict(const RowMatrix& logits) {
    const RowMatrix p = softmax(logits);
    Predictions out;
    out.labels.resize(static_cast<std::size_t>(p.rows()));
    out.confidences.resize(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        Eigen::Index arg = 0;
        out.confidences[i] = p.row(i).maxCoeff(&arg);
        out.labels[i] = static_cast<int>(arg);
    }
    return out;
}

std::string EvalReport::to_key_values() const {
    std::ostringstream os;
    os << std::setprecision(17);
    if (accuracy) os << "accuracy=" << *accuracy << '\n';
    if (ece) os << "ece=" << *ece << '\n';
    os << "auroc=" << auroc << '\n';
    if (entropy_auroc) os << "entropy_auroc=" << *entropy_auroc << '\n';
    os << "n_id=" << n_id << '\n';
    os << "n_ood=" << n_ood << '\n';
    os << "bandwidth_used=" << bandwidth_used << '\n';
    if (threshold) os << "threshold=" << *threshold << '\n';
    if (ood_flag_rate_id) os << "ood_flag_rate_id=" << *ood_flag_rate_id << '\n';
    if (ood_flag_rate_ood) os << "ood_flag_rate_ood=" << *ood_flag_rate_ood << '\n';
    return os.str();
}

EvalReport EvalReport::from_key_values(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "accuracy") r.accuracy = std::stod(value);
        else if (key == "ece") r.ece = std::stod(value);
        else if (key == "auroc") r.auroc = std::stod(value);
        else if (key == "entropy_auroc") r.entropy_auroc = std::stod(value);
        else if (key == "n_id") r.n_id = std::stoull(value);
        else if (key == "n_ood") r.n_ood = std::stoull(value);
        else if (key == "bandwidth_used") r.bandwidth_used = std::stod(value);
        else if (key == "threshold") r.threshold = std::stod(value);
        else if (key == "ood_flag_rate_id") r.ood_flag_rate_id = std::stod(value);
        else if (key == "ood_flag_rate_ood") r.ood_flag_rate_ood = std::stod(value);
    }
    return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << report.to_key_values();
}

}  // namespace ipfield
