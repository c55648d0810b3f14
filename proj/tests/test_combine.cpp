#include "rmlab/combine.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace rmlab;

namespace {

constexpr int kLists = 10000;

CombinerConfig cfg(CombinerMode m, double lambda = 0.5, int member = 0) {
    CombinerConfig c;
    c.mode = m;
    c.lambda = lambda;
    c.member_index = member;
    return c;
}

std::vector<double> random_list(Rng& rng) {
    const int k = 1 + static_cast<int>(uniform01(rng) * 8);
    const double scale = std::exp(4.0 * uniform01(rng) - 2.0);
    std::vector<double> v(static_cast<std::size_t>(k));
    for (auto& x : v) x = scale * standard_normal(rng);
    return v;
}

long double ref_mean(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    return s / static_cast<long double>(v.size());
}

// E[x^2] - E[x]^2 in extended precision.
long double ref_var(const std::vector<double>& v) {
    long double s = 0, ss = 0;
    for (double x : v) {
        s += x;
        ss += static_cast<long double>(x) * x;
    }
    const long double n = static_cast<long double>(v.size());
    return ss / n - (s / n) * (s / n);
}

double tol(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return 1e-12 * std::max(1.0, m * m);
}

}  // namespace

TEST_CASE("combiners agree with extended-precision references") {
    Rng rng = make_rng(1, "test.combine");
    for (int t = 0; t < kLists; ++t) {
        const auto v = random_list(rng);
        const double lambda = 2.0 * uniform01(rng);
        CHECK(std::abs(combine(v, cfg(CombinerMode::mean)) - static_cast<double>(ref_mean(v))) <= tol(v));
        CHECK(combine(v, cfg(CombinerMode::wco)) == *std::min_element(v.begin(), v.end()));
        CHECK(std::abs(intra_variance(v) - static_cast<double>(ref_var(v))) <= tol(v));
        const double uwo = combine(v, cfg(CombinerMode::uwo, lambda));
        CHECK(std::abs(uwo - static_cast<double>(ref_mean(v) - lambda * ref_var(v))) <= 3.0 * tol(v));
        const int member = static_cast<int>(uniform01(rng) * static_cast<double>(v.size()));
        CHECK(combine(v, cfg(CombinerMode::single, 0.5, member)) == v[static_cast<std::size_t>(member)]);
    }
}

TEST_CASE("combiner ordering and variance properties") {
    Rng rng = make_rng(2, "test.combine");
    for (int t = 0; t < kLists; ++t) {
        const auto v = random_list(rng);
        const double mean = combine(v, cfg(CombinerMode::mean));
        const double lo = *std::min_element(v.begin(), v.end());
        const double hi = *std::max_element(v.begin(), v.end());
        const double eps = tol(v);
        CHECK(intra_variance(v) >= 0.0);
        CHECK(combine(v, cfg(CombinerMode::wco)) <= mean + eps);
        CHECK(mean >= lo - eps);
        CHECK(mean <= hi + eps);
        CHECK(combine(v, cfg(CombinerMode::uwo, 0.0)) == mean);
        const double l1 = uniform01(rng), l2 = l1 + uniform01(rng);
        CHECK(combine(v, cfg(CombinerMode::uwo, l2)) <= combine(v, cfg(CombinerMode::uwo, l1)) + eps);
        CHECK(combine(v, cfg(CombinerMode::uwo, l1)) <= mean + eps);
        // population variance is bounded by the squared half-range
        CHECK(intra_variance(v) <= 0.25 * (hi - lo) * (hi - lo) + eps);
    }
}

TEST_CASE("combiners are permutation invariant and translation equivariant") {
    Rng rng = make_rng(3, "test.combine");
    for (int t = 0; t < kLists; ++t) {
        auto v = random_list(rng);
        const double c = 3.0 * standard_normal(rng);
        const double lambda = uniform01(rng);
        auto shifted = v;
        for (auto& x : shifted) x += c;
        auto perm = v;
        std::reverse(perm.begin(), perm.end());
        std::rotate(perm.begin(), perm.begin() + static_cast<long>(perm.size() / 2), perm.end());
        const double eps = tol(shifted) * 10.0;
        for (auto mode : {CombinerMode::mean, CombinerMode::wco, CombinerMode::uwo}) {
            const auto k = cfg(mode, lambda);
            CHECK(std::abs(combine(perm, k) - combine(v, k)) <= eps);
            CHECK(std::abs(combine(shifted, k) - (combine(v, k) + c)) <= eps);
        }
        CHECK(std::abs(intra_variance(shifted) - intra_variance(v)) <= eps);
    }
}

TEST_CASE("a single-member ensemble makes every combiner the identity") {
    Rng rng = make_rng(4, "test.combine");
    for (int t = 0; t < 1000; ++t) {
        const std::vector<double> v{standard_normal(rng)};
        for (auto mode : {CombinerMode::single, CombinerMode::mean, CombinerMode::wco, CombinerMode::uwo})
            CHECK(combine(v, cfg(mode, 5.0)) == v[0]);
        CHECK(intra_variance(v) == 0.0);
    }
    const std::vector<double> same(5, 1.25);
    CHECK(intra_variance(same) == 0.0);
    CHECK(combine(same, cfg(CombinerMode::uwo, 100.0)) == 1.25);
}

TEST_CASE("hand-computed values") {
    const std::vector<double> v{1.0, 2.0, 6.0};
    CHECK(combine(v, cfg(CombinerMode::mean)) == 3.0);
    CHECK(combine(v, cfg(CombinerMode::wco)) == 1.0);
    CHECK(intra_variance(v) == doctest::Approx(14.0 / 3.0));
    CHECK(combine(v, cfg(CombinerMode::uwo, 0.5)) == doctest::Approx(3.0 - 7.0 / 3.0));
    CHECK(combine(v, cfg(CombinerMode::single, 0.5, 2)) == 6.0);
}

TEST_CASE("column-wise combination matches per-column combination") {
    Rng rng = make_rng(5, "test.combine");
    Matrix m(4, 50);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
    for (auto mode : {CombinerMode::single, CombinerMode::mean, CombinerMode::wco, CombinerMode::uwo}) {
        const auto k = cfg(mode, 0.3, 2);
        const Vector out = combine_columns(m, k);
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const Vector col = m.col(c);
            CHECK(out(c) == combine(std::span<const double>(col.data(), 4), k));
        }
    }
    const Vector var = variance_columns(m);
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const Vector col = m.col(c);
        CHECK(var(c) == intra_variance(std::span<const double>(col.data(), 4)));
    }
}

TEST_CASE("combiner validation, labels and json") {
    const std::vector<double> v{1.0, 2.0};
    CHECK_THROWS_AS(combine(std::span<const double>{}, cfg(CombinerMode::mean)), ConfigError);
    CHECK_THROWS_AS(combine(v, cfg(CombinerMode::single, 0.5, 2)), ConfigError);
    CHECK_THROWS_AS(combine(v, cfg(CombinerMode::single, 0.5, -1)), ConfigError);
    CHECK_THROWS_AS(combine(v, cfg(CombinerMode::uwo, -0.1)), ConfigError);
    CHECK_THROWS_AS(combine(v, cfg(CombinerMode::uwo, NAN)), ConfigError);
    CHECK_THROWS_AS(combiner_mode_from_string("median"), ConfigError);

    CHECK(cfg(CombinerMode::single, 0.5, 3).label() == "single3");
    CHECK(cfg(CombinerMode::mean).label() == "mean");
    CHECK(cfg(CombinerMode::wco).label() == "wco");
    CHECK(cfg(CombinerMode::uwo, 0.5).label() == "uwo0.5");
    CHECK(cfg(CombinerMode::uwo, 0.1).label() == "uwo0.1");

    for (const auto& c : {cfg(CombinerMode::uwo, 0.25), cfg(CombinerMode::single, 0.5, 4)}) {
        const nlohmann::json j = c;
        CHECK(j.get<CombinerConfig>() == c);
    }
    nlohmann::json bad = cfg(CombinerMode::mean);
    bad["weight"] = 1;
    CHECK_THROWS_AS(bad.get<CombinerConfig>(), ConfigError);
}
