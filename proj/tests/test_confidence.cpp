#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <random>

#include "nnad/confidence.hpp"

using namespace nnad;

TEST(Confidence, GammaMatchesBoost) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ua(0.3, 12.0), ux(0.0, 30.0);
    for (int i = 0; i < 500; ++i) {
        const double a = ua(rng), x = ux(rng);
        EXPECT_NEAR(regularized_gamma_p(a, x), boost::math::gamma_p(a, x), 1e-12) << a << " " << x;
    }
}

TEST(Confidence, ScaleMatchesChiSquaredQuantile) {
    for (int p = 1; p <= 8; ++p) {
        for (double pb : {0.5, 0.9, 0.95, 0.99, 0.999}) {
            const boost::math::chi_squared dist(p);
            EXPECT_NEAR(confidence_scale(p, pb), boost::math::quantile(dist, pb), 1e-9) << p << " " << pb;
        }
    }
}

TEST(Confidence, TwoDimensionalClosedForm) {
    // chi2 with 2 dof has CDF 1 - exp(-x / 2)
    for (double pb : {0.1, 0.5, 0.95, 0.999}) {
        EXPECT_NEAR(confidence_scale(2, pb), -2.0 * std::log1p(-pb), 1e-10);
    }
    EXPECT_NEAR(confidence_scale(2, 0.95), 5.9915, 1e-3);
}

TEST(Confidence, BeamNoiseShape) {
    Mat sv(2, 2);
    sv << 0.0214, 0.0112, 0.0112, 0.0217;
    const ConfidenceSpec s = make_confidence_spec(0.95, sv);
    Mat expected(2, 2);
    expected << 0.1282, 0.0671, 0.0671, 0.1300;
    EXPECT_LT((s.sigma_v_bar - expected).cwiseAbs().maxCoeff(), 5e-4);
    EXPECT_EQ(s.p, 2);
}

TEST(Confidence, RejectsBadArguments) {
    EXPECT_THROW(confidence_scale(2, 0.0), DomainError);
    EXPECT_THROW(confidence_scale(2, 1.0), DomainError);
    EXPECT_THROW(confidence_scale(0, 0.5), DomainError);
    Mat bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0;
    EXPECT_ANY_THROW(make_confidence_spec(0.95, bad));
}

TEST(Confidence, EmpiricalCoverage) {
    Mat sv(2, 2);
    sv << 0.0214, 0.0112, 0.0112, 0.0217;
    const ConfidenceSpec s = make_confidence_spec(0.95, sv);
    const Ellipsoid e = confidence_ellipsoid(s, Vec::Zero(2));
    const Eigen::LLT<Mat> llt(sv);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    int inside = 0;
    const int trials = 40000;
    for (int i = 0; i < trials; ++i) {
        Vec z(2);
        z << n01(rng), n01(rng);
        if (contains(e, llt.matrixL() * z).inside) ++inside;
    }
    EXPECT_NEAR(static_cast<double>(inside) / trials, 0.95, 0.005);
}
