#pragma once

#include <json.hpp>
#include <random>

#include "nnad/types.hpp"

namespace nnad {

/**
 * Ellipsoid E(mu, Sigma) = { x : (x - mu)^T Sigma^{-1} (x - mu) <= 1 }.
 *
 * The shape matrix is symmetrized on construction and must be positive
 * definite (minimum eigenvalue above 1e-12). The Cholesky factor of the
 * shape is cached, so membership queries cost one triangular solve.
 */
class Ellipsoid {
public:
    static constexpr double kMinEigenvalue = 1e-12;

    Ellipsoid(Vec center, Mat shape);

    int dim() const { return static_cast<int>(center_.size()); }
    const Vec& center() const { return center_; }
    const Mat& shape() const { return shape_; }

    /// Lower-triangular L with L L^T = shape.
    const Mat& shape_factor() const { return factor_; }
    Mat precision() const;

    /// (x - mu)^T Sigma^{-1} (x - mu).
    double margin(const Vec& x) const;

    /// Half the log-determinant of the shape; volume up to the unit-ball constant.
    double log_volume() const { return half_logdet_; }

private:
    Vec center_;
    Mat shape_;
    Mat factor_;
    double half_logdet_ = 0.0;
};

/// Points with margin in (1, 1 + kBoundaryTolerance] count as inside.
inline constexpr double kBoundaryTolerance = 1e-9;

struct Membership {
    bool inside = false;
    double margin = 0.0;
};

Membership contains(const Ellipsoid& e, const Vec& point);

/// Exact image of `e` under x -> W x + b. W must have full row rank.
Ellipsoid affine_image(const Ellipsoid& e, const Mat& W, const Vec& b);

struct MinkowskiMembership {
    bool inside = false;
    /// Optimal multiplier of the dual root-finding problem; 0 when the point
    /// already lies in the second summand translated by the first center.
    double kappa = 0.0;
    /// min over s in E2 - mu2 of (d - s)^T Sigma1^{-1} (d - s), d = point - mu1 - mu2.
    double margin = 0.0;
};

/// Decides point in E1 (+) E2 (Minkowski sum) by one-dimensional root finding.
MinkowskiMembership minkowski_contains(const Ellipsoid& e1, const Ellipsoid& e2,
                                       const Vec& point);

double log_volume(const Ellipsoid& e);

enum class SampleMode { Interior, Boundary };

/// Uniform point in the ellipsoid (interior) or image of a uniform direction
/// on the unit sphere (boundary).
Vec sample(const Ellipsoid& e, SampleMode mode, std::mt19937_64& rng);

nlohmann::json to_json(const Ellipsoid& e);
Ellipsoid ellipsoid_from_json(const nlohmann::json& j);

}  // namespace nnad
