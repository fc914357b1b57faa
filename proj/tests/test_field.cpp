#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ipfield/field.hpp"
#include "ipfield/random.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace ipfield;

namespace {

RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
    return m;
}

}  // namespace

TEST_CASE("lone reference point scores one") {
    RowMatrix ref(1, 3);
    ref << 0.5, -1.0, 2.0;
    const IpfField field(ref, 0.3);
    const std::vector<double> q{0.5, -1.0, 2.0};
    CHECK(field.evaluate(q) == 1.0);
}

TEST_CASE("midpoint of two references") {
    const double dist = 1.7, h = 0.4;
    RowMatrix ref(2, 2);
    ref << 0.0, 0.0, dist, 0.0;
    const IpfField field(ref, h);
    const std::vector<double> q{dist / 2, 0.0};
    CHECK(field.evaluate(q) == doctest::Approx(std::exp(-dist * dist / (8 * h * h))).epsilon(1e-12));
}

TEST_CASE("evaluate matches the naive double loop") {
    Rng rng(11);
    const RowMatrix ref = random_matrix(200, 8, rng, 0.3);
    const RowMatrix q = random_matrix(50, 8, rng, 0.3);
    const IpfField field(ref, 0.3);
    const Vector psi = field.evaluate(q);
    const auto expected = oracle::naive_psi(ref, q, 0.3);
    for (Eigen::Index i = 0; i < psi.size(); ++i) CHECK(oracle::close_relative(psi[i], expected[i], 1e-9));
}

TEST_CASE("psi lies in (0, 1] and equals one only on a collapsed reference set") {
    Rng rng(12);
    const RowMatrix ref = random_matrix(30, 2, rng);
    const IpfField field(ref, 0.5);
    const Vector psi = field.evaluate(random_matrix(100, 2, rng));
    CHECK(psi.minCoeff() > 0.0);
    CHECK(psi.maxCoeff() < 1.0);
    const Vector self = field.evaluate(ref);
    CHECK(self.maxCoeff() < 1.0);

    RowMatrix same = RowMatrix::Constant(5, 2, 0.25);
    const IpfField collapsed(same, 0.1);
    CHECK(collapsed.evaluate(std::vector{0.25, 0.25}) == 1.0);
}

TEST_CASE("psi increases strictly with bandwidth") {
    Rng rng(13);
    const RowMatrix ref = random_matrix(40, 3, rng);
    const RowMatrix q = random_matrix(10, 3, rng);
    Vector prev = IpfField(ref, 0.1).evaluate(q);
    for (double h : {0.2, 0.3, 0.5, 0.8, 1.3}) {
        const Vector cur = IpfField(ref, h).evaluate(q);
        for (Eigen::Index i = 0; i < cur.size(); ++i) CHECK(cur[i] > prev[i]);
        prev = cur;
    }
}

TEST_CASE("translation invariance") {
    Rng rng(14);
    const RowMatrix ref = random_matrix(60, 4, rng);
    const RowMatrix q = random_matrix(20, 4, rng);
    Eigen::RowVectorXd shift(4);
    shift << 3.0, -2.0, 0.5, 10.0;
    const RowMatrix ref2 = ref.rowwise() + shift;
    const RowMatrix q2 = q.rowwise() + shift;
    const Vector a = IpfField(ref, 0.7).evaluate(q);
    const Vector b = IpfField(ref2, 0.7).evaluate(q2);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("permuting references leaves psi unchanged") {
    Rng rng(15);
    const RowMatrix ref = random_matrix(100, 5, rng);
    const RowMatrix q = random_matrix(20, 5, rng);
    std::vector<Eigen::Index> perm(100);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[3], perm[70]);
    RowMatrix shuffled(100, 5);
    for (Eigen::Index i = 0; i < 100; ++i) shuffled.row(i) = ref.row(perm[i]);
    const Vector a = IpfField(ref, 1.1).evaluate(q);
    const Vector b = IpfField(shuffled, 1.1).evaluate(q);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(oracle::close_relative(a[i], b[i], 1e-9));
}

TEST_CASE("chunking and threads do not change results") {
    Rng rng(16);
    const RowMatrix ref = random_matrix(333, 7, rng);
    const RowMatrix q = random_matrix(101, 7, rng);
    const IpfField field(ref, 0.9);
    const Vector single = field.evaluate(q, {.query_chunk = 1000, .reference_chunk = 1000, .threads = 1});
    const Vector chunked = field.evaluate(q, {.query_chunk = 7, .reference_chunk = 13, .threads = 4});
    CHECK((single - chunked).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("log mode agrees with psi and survives underflow") {
    Rng rng(17);
    const RowMatrix ref = random_matrix(50, 3, rng);
    const RowMatrix q = random_matrix(10, 3, rng);
    const IpfField field(ref, 0.6);
    const Vector psi = field.evaluate(q);
    const Vector lp = field.evaluate_log(q);
    for (Eigen::Index i = 0; i < psi.size(); ++i) CHECK(lp[i] == doctest::Approx(std::log(psi[i])).epsilon(1e-12));

    RowMatrix far = RowMatrix::Constant(1, 3, 1000.0);
    CHECK(field.evaluate(far)[0] == 0.0);
    CHECK(std::isfinite(field.evaluate_log(far)[0]));
}

TEST_CASE("field construction and query validation") {
    CHECK_THROWS_AS(IpfField(RowMatrix(0, 2), 0.3), std::invalid_argument);
    CHECK_THROWS_AS(IpfField(RowMatrix::Zero(3, 2), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(IpfField(RowMatrix::Zero(3, 2), -1.0), std::invalid_argument);
    RowMatrix bad = RowMatrix::Zero(3, 2);
    bad(1, 1) = NAN;
    CHECK_THROWS_AS(IpfField(bad, 0.3), std::invalid_argument);
    const IpfField field(RowMatrix::Zero(3, 2), 0.3);
    CHECK_THROWS_AS(field.evaluate(RowMatrix::Zero(1, 3)), std::invalid_argument);
    RowMatrix q = RowMatrix::Zero(1, 2);
    q(0, 0) = INFINITY;
    CHECK_THROWS_AS(field.evaluate(q), std::invalid_argument);
}

TEST_CASE("decide") {
    RowMatrix ref(1, 2);
    ref << 1.0, 1.0;
    const IpfField field(ref, 0.3);
    const OodDecision at = decide(field, std::vector{1.0, 1.0}, 0.5);
    CHECK(at.score == 1.0);
    CHECK_FALSE(at.is_ood);

    const double eps = 1e-6;
    const double dist = 10.0 * 0.3 * std::sqrt(2.0 * std::log(1.0 / eps));
    const OodDecision far = decide(field, std::vector{1.0 + dist, 1.0}, eps);
    CHECK(far.score < eps);
    CHECK(far.is_ood);
    CHECK_THROWS_AS(decide(field, std::vector{1.0, 1.0}, NAN), std::invalid_argument);
}

TEST_CASE("calibrate threshold") {
    const IpfField same(RowMatrix::Constant(6, 3, 2.0), 0.2);
    CHECK(calibrate_threshold(same, 5.0) == 1.0);
    CHECK(calibrate_threshold(same, 95.0) == 1.0);
    CHECK_THROWS_AS(calibrate_threshold(same, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(calibrate_threshold(same, 100.0), std::invalid_argument);

    Rng rng(18);
    const RowMatrix ref = random_matrix(400, 2, rng);
    const IpfField field(ref, 0.3);
    const double t = calibrate_threshold(field, 5.0);
    const Vector psi = field.evaluate(ref);
    const double flagged = static_cast<double>((psi.array() < t).count()) / 400.0;
    CHECK(flagged == doctest::Approx(0.05).epsilon(0.01));
}

TEST_CASE("silverman bandwidth") {
    // d = 1, N = 100, unit sample standard deviation.
    RowMatrix x(100, 1);
    for (int i = 0; i < 100; ++i) x(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    x *= 1.0 / std::sqrt(100.0 / 99.0);
    const double expected = std::pow(4.0 / 300.0, 1.0 / 5.0);
    CHECK(silverman_bandwidth(x) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.4217).epsilon(1e-4));

    Rng rng(19);
    const RowMatrix y = random_matrix(50, 3, rng);
    CHECK(silverman_bandwidth(RowMatrix(y * 2.5)) == doctest::Approx(2.5 * silverman_bandwidth(y)).epsilon(1e-13));

    const RowMatrix wide = random_matrix(200, 640, rng);
    const double h = silverman_bandwidth(wide);
    CHECK(std::isfinite(h));
    CHECK(h > 0.0);

    CHECK_THROWS_AS(silverman_bandwidth(RowMatrix::Zero(1, 2)), std::invalid_argument);
    CHECK_THROWS_AS(silverman_bandwidth(RowMatrix::Constant(5, 2, 3.0)), std::invalid_argument);
}

TEST_CASE("sweep with identical validation sets is chance everywhere") {
    Rng rng(20);
    const RowMatrix ref = random_matrix(80, 2, rng);
    const RowMatrix val = random_matrix(30, 2, rng);
    const auto grid = linear_grid(0.1, 1.0, 10);
    const SweepResult res = sweep_bandwidth(ref, val, val, grid);
    REQUIRE(res.table.size() == 10);
    for (const auto& row : res.table) CHECK(row.auroc == 0.5);
    CHECK(res.best_bandwidth == 0.1);
}

TEST_CASE("sweep scores equal direct evaluation") {
    Rng rng(21);
    const RowMatrix ref = random_matrix(120, 4, rng);
    const RowMatrix id = random_matrix(25, 4, rng);
    const RowMatrix ood = random_matrix(25, 4, rng, 3.0);
    const std::vector<double> grid{0.3, 0.8, 2.0};
    const SweepResult res = sweep_bandwidth(ref, id, ood, grid, {.query_chunk = 5, .reference_chunk = 17});
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const IpfField f(ref, grid[k]);
        const Vector a = f.evaluate(id);
        const Vector b = f.evaluate(ood);
        std::vector<double> as(a.data(), a.data() + a.size()), bs(b.data(), b.data() + b.size());
        CHECK(res.table[k].auroc == oracle::pairwise_auroc(as, bs));
    }
    CHECK(res.best_auroc > 0.8);
}

TEST_CASE("sweep coverage is nondecreasing in bandwidth") {
    Rng rng(22);
    const RowMatrix ref = random_matrix(100, 2, rng);
    const RowMatrix id = random_matrix(40, 2, rng);
    const RowMatrix ood = random_matrix(40, 2, rng, 4.0);
    const SweepResult res = sweep_bandwidth(ref, id, ood, linear_grid(0.05, 1.0, 20));
    for (std::size_t k = 1; k < res.table.size(); ++k)
        CHECK(res.table[k].id_coverage >= res.table[k - 1].id_coverage);
}

TEST_CASE("single-point sweep returns that bandwidth") {
    Rng rng(23);
    const RowMatrix ref = random_matrix(20, 2, rng);
    const std::vector<double> grid{0.42};
    CHECK(sweep_bandwidth(ref, ref, RowMatrix(ref.array() + 5.0), grid).best_bandwidth == 0.42);
    CHECK_THROWS_AS(sweep_bandwidth(ref, ref, ref, std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(sweep_bandwidth(ref, RowMatrix::Zero(2, 3), ref, grid), std::invalid_argument);
}

TEST_CASE("bandwidth grids") {
    const auto lin = linear_grid(0.1, 1.0, 10);
    CHECK(lin.front() == 0.1);
    CHECK(lin.back() == 1.0);
    const auto lg = log_grid(0.01, 1.0, 3);
    CHECK(lg[1] == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(log_grid(0.0, 1.0, 3), std::invalid_argument);
}
