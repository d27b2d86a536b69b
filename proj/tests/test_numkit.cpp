#include "smct/numkit.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "doctest.h"

using namespace smct;

TEST_CASE("softmax closed forms") {
    Vec a = softmax(std::vector<double>{0.0, 0.0});
    CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(0.5).epsilon(1e-12));

    Vec b = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(b[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(b[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // extreme logits must not overflow thanks to max-subtraction
    Vec c = softmax(std::vector<double>{1000.0, 0.0});
    CHECK(c[0] == doctest::Approx(1.0));
    CHECK(c[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(c[0]));

    CHECK_THROWS_AS(softmax(std::vector<double>{}), std::domain_error);
}

TEST_CASE("softmax sums to one across magnitudes and breaks ties exactly") {
    SeededRng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Vec logits(5);
        double scale = std::pow(10.0, 4.0 * rng.next_uniform());
        for (double& v : logits) v = scale * (2.0 * rng.next_uniform() - 1.0);
        Vec p = softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    Vec tie = softmax(std::vector<double>{3.25, 1.0, 3.25});
    CHECK(tie[0] == tie[2]);  // exact equality, not approximate
}

TEST_CASE("gaussian_sample zero std and determinism") {
    Vec mean = {1.5, -2.0, 0.25};
    SeededRng rng(42);
    GaussianDraw d = gaussian_sample(mean, 0.0, rng);
    CHECK(d.value == mean);

    SeededRng r1(9), r2(9);
    GaussianDraw a = gaussian_sample(mean, 1.0, r1);
    GaussianDraw b = gaussian_sample(mean, 1.0, r2);
    CHECK(a.value == b.value);
    CHECK(a.eps == b.eps);

    // reparametrization bookkeeping: value = mean + std*eps
    for (size_t i = 0; i < mean.size(); ++i)
        CHECK(a.value[i] == doctest::Approx(mean[i] + a.eps[i]).epsilon(1e-15));

    CHECK_THROWS_AS(gaussian_sample(mean, -1.0, rng), std::domain_error);
}

TEST_CASE("gaussian_sample statistical oracle") {
    // 1e5 draws: sample mean within 0.02 of 0, sample variance within 0.02 of 1
    const int n = 100000;
    SeededRng rng(12345);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = rng.next_gaussian();
        sum += x;
        sumsq += x * x;
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng child streams are independent of sibling consumption") {
    SeededRng base(100);
    SeededRng a = base.child(1);
    SeededRng b = base.child(2);
    double b_first = b.next_u64();

    // consuming from stream a must not change what b yields
    SeededRng a2 = base.child(1);
    for (int i = 0; i < 17; ++i) a2.next_u64();
    SeededRng b2 = base.child(2);
    CHECK(b2.next_u64() == b_first);

    // distinct keys give distinct streams
    CHECK(base.child(1).next_u64() != base.child(2).next_u64());
    CHECK(a.next_u64() != base.child(1).child(1).next_u64());
}

TEST_CASE("log_gaussian_density closed forms") {
    const double l2pi = std::log(2.0 * std::numbers::pi);
    Vec x = {0.0}, m = {0.0};
    CHECK(log_gaussian_density(x, m, 1.0) == doctest::Approx(-0.5 * l2pi).epsilon(1e-12));

    Vec x1 = {1.0};
    CHECK(log_gaussian_density(x1, m, 1.0)
          == doctest::Approx(-0.5 * l2pi - 0.5).epsilon(1e-12));

    // quadrupling the variance at zero residual drops the density by 0.5*ln 4
    double d1 = log_gaussian_density(x, m, 1.0);
    double d4 = log_gaussian_density(x, m, 4.0);
    CHECK(d1 - d4 == doctest::Approx(0.5 * std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(log_gaussian_density(x, m, 0.0), std::domain_error);
    CHECK_THROWS_AS(log_gaussian_density(x, m, -1.0), std::domain_error);
    Vec wrong = {0.0, 0.0};
    CHECK_THROWS_AS(log_gaussian_density(x, wrong, 1.0), std::domain_error);
}

TEST_CASE("matvec, layer_norm and relu basics") {
    Mat w(2, 3);
    w.at(0, 0) = 1.0; w.at(0, 1) = 2.0; w.at(0, 2) = 3.0;
    w.at(1, 0) = -1.0; w.at(1, 1) = 0.5; w.at(1, 2) = 0.0;
    Vec x = {1.0, 1.0, 2.0};
    Vec y = matvec(w, x);
    CHECK(y[0] == doctest::Approx(9.0));
    CHECK(y[1] == doctest::Approx(-0.5));
    CHECK_THROWS_AS(matvec(w, Vec{1.0}), std::domain_error);

    Vec g = {1.0, 1.0}, b = {0.0, 0.0};
    Vec z = {1.0, -1.0};  // zero mean, unit variance
    Vec ln = layer_norm(z, g, b, 1e-6);
    CHECK(ln[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(ln[1] == doctest::Approx(-1.0).epsilon(1e-6));

    // constant input: eps guard keeps the output finite and equal to bias
    Vec cst = {3.0, 3.0};
    Vec b2 = {0.25, -0.5};
    Vec ln2 = layer_norm(cst, g, b2, 1e-6);
    CHECK(ln2[0] == doctest::Approx(0.25));
    CHECK(ln2[1] == doctest::Approx(-0.5));

    Vec r = relu(std::vector<double>{-1.0, 0.0, 2.5});
    CHECK(r == Vec{0.0, 0.0, 2.5});
}

TEST_CASE("empirical_quantile uses the n*p + 0.5 order-statistic rule") {
    Vec v(100);
    for (int i = 0; i < 100; ++i) v[i] = i + 1.0;
    CHECK(empirical_quantile(v, 0.025) == 3.0);
    CHECK(empirical_quantile(v, 0.975) == 98.0);
    CHECK(empirical_quantile(v, 0.5) == doctest::Approx(50.5));

    // h clamps to [1, n]
    CHECK(empirical_quantile(v, 0.0) == 1.0);
    CHECK(empirical_quantile(v, 1.0) == 100.0);
    CHECK(empirical_quantile(Vec{7.0}, 0.3) == 7.0);

    // interpolation between order statistics, input order irrelevant
    Vec u{4.0, 1.0, 3.0, 2.0};  // sorted 1 2 3 4; h = 4*0.5+0.5 = 2.5
    CHECK(empirical_quantile(u, 0.5) == doctest::Approx(2.5));

    CHECK_THROWS_AS(empirical_quantile(Vec{}, 0.5), std::domain_error);
}

TEST_CASE("format_double round-trips and stays short") {
    CHECK(format_double(10.0) == "10");
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(-3.25) == "-3.25");
    double v = 0.1 + 0.2;
    CHECK(std::stod(format_double(v)) == v);
    CHECK(std::stod(format_double(1e-300)) == 1e-300);
}
