#include <cmath>
#include <sstream>

#include "nnad/ellipsoid.hpp"

namespace nnad {

// With Sigma1 = L L^T and t = L^{-1} s, the closest point of E2 - mu2 to d in the
// Sigma1 metric solves (I + kappa K) t = L^{-1} d, K = L^T Sigma2^{-1} L. In the
// eigenbasis of K = P diag(theta) P^T the constraint residual is the scalar
//   g(kappa) = sum_i theta_i c_i^2 / (1 + kappa theta_i)^2,   c = P^T L^{-1} d,
// which is convex and strictly decreasing, so Newton from kappa = 0 approaches
// the root g = 1 monotonically from the left.
MinkowskiMembership minkowski_contains(const Ellipsoid& e1, const Ellipsoid& e2,
                                       const Vec& point) {
    detail::require_dim(e1.dim() == e2.dim(), "minkowski_contains: ellipsoid dimensions differ");
    detail::require_dim(point.size() == e1.dim(), "minkowski_contains: point dimension mismatch");

    const Vec d = point - e1.center() - e2.center();
    const auto l2 = e2.shape_factor().triangularView<Eigen::Lower>();
    if (l2.solve(d).squaredNorm() <= 1.0) return {true, 0.0, 0.0};

    const auto l1 = e1.shape_factor().triangularView<Eigen::Lower>();
    const Mat r = l2.solve(e1.shape_factor());
    const Mat k = r.transpose() * r;
    const Eigen::SelfAdjointEigenSolver<Mat> eig(k);
    const Vec theta = eig.eigenvalues();
    const Vec c = eig.eigenvectors().transpose() * l1.solve(d);
    const Vec c2 = c.array().square();

    auto g = [&](double kappa) {
        return (theta.array() * c2.array() / (1.0 + kappa * theta.array()).square()).sum();
    };
    auto dg = [&](double kappa) {
        return (-2.0 * theta.array().square() * c2.array() / (1.0 + kappa * theta.array()).cube())
            .sum();
    };

    double hi = 1.0;
    while (g(hi) > 1.0) {
        hi *= 2.0;
        if (!std::isfinite(hi) || hi > 1e300) {
            std::ostringstream os;
            os << "minkowski_contains: failed to bracket multiplier (g(0)=" << g(0.0) << ")";
            throw NumericalError(os.str());
        }
    }
    double lo = 0.0;
    double kappa = 0.0;
    double residual = g(kappa) - 1.0;
    for (int iter = 0; iter < 500 && std::abs(residual) > 1e-10; ++iter) {
        if (residual > 0.0) lo = kappa; else hi = kappa;
        double next = kappa - residual / dg(kappa);
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        kappa = next;
        residual = g(kappa) - 1.0;
        if (hi - lo <= 1e-16 * std::max(1.0, hi)) break;
    }
    if (std::abs(residual) > 1e-10) {
        std::ostringstream os;
        os << "minkowski_contains: root finding stalled at kappa=" << kappa
           << " (residual " << residual << ", bracket [" << lo << ", " << hi << "])";
        throw NumericalError(os.str());
    }

    const double margin =
        (c2.array() * (kappa * theta.array() / (1.0 + kappa * theta.array())).square()).sum();
    return {margin <= 1.0 + kBoundaryTolerance, kappa, margin};
}

}  // namespace nnad
