#pragma once

#include "nnad/ellipsoid.hpp"
#include "nnad/types.hpp"

namespace nnad {

/// Regularized lower incomplete gamma function P(a, x).
double regularized_gamma_p(double a, double x);

/**
 * Scale alpha such that a p-dimensional Gaussian with covariance Sigma lies in
 * E(0, alpha * Sigma) with probability p_bar, i.e. the p_bar-quantile of the
 * chi-squared distribution with p degrees of freedom:
 * alpha = 2 * P^{-1}(p / 2, p_bar).
 *
 * Throws DomainError unless 0 < p_bar < 1 and p >= 1; NumericalError if the
 * safeguarded Newton iteration fails to reach 1e-10.
 */
double confidence_scale(int p, double p_bar);

struct ConfidenceSpec {
    double p_bar = 0.95;
    int p = 0;
    Mat sigma_v;
    double alpha = 0.0;
    Mat sigma_v_bar;
};

ConfidenceSpec make_confidence_spec(double p_bar, const Mat& sigma_v);

/// E(center, alpha * Sigma_v).
Ellipsoid confidence_ellipsoid(const ConfidenceSpec& spec, const Vec& center);

}  // namespace nnad
