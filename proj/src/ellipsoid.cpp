#include "nnad/ellipsoid.hpp"

#include <cmath>
#include <sstream>

namespace nnad {

Ellipsoid::Ellipsoid(Vec center, Mat shape) : center_(std::move(center)) {
    detail::require_dim(shape.rows() == shape.cols(), "Ellipsoid: shape must be square");
    detail::require_dim(shape.rows() == center_.size(),
                        "Ellipsoid: shape and center dimensions differ");
    if (center_.size() == 0) throw DimensionError("Ellipsoid: zero dimension");
    if (!center_.allFinite() || !shape.allFinite()) {
        throw DomainError("Ellipsoid: non-finite center or shape");
    }
    shape_ = 0.5 * (shape + shape.transpose());

    const Eigen::SelfAdjointEigenSolver<Mat> eig(shape_, Eigen::EigenvaluesOnly);
    const double min_eig = eig.eigenvalues().minCoeff();
    if (!(min_eig > kMinEigenvalue)) {
        std::ostringstream os;
        os << "Ellipsoid: shape is not positive definite (min eigenvalue " << min_eig << ")";
        throw DomainError(os.str());
    }
    const Eigen::LLT<Mat> llt(shape_);
    if (llt.info() != Eigen::Success) throw DomainError("Ellipsoid: Cholesky factorization failed");
    factor_ = llt.matrixL();
    half_logdet_ = factor_.diagonal().array().log().sum();
}

Mat Ellipsoid::precision() const {
    const Mat linv = factor_.triangularView<Eigen::Lower>().solve(Mat::Identity(dim(), dim()));
    return linv.transpose() * linv;
}

double Ellipsoid::margin(const Vec& x) const {
    detail::require_dim(x.size() == center_.size(), "Ellipsoid::margin: dimension mismatch");
    const Vec w = factor_.triangularView<Eigen::Lower>().solve(x - center_);
    return w.squaredNorm();
}

Membership contains(const Ellipsoid& e, const Vec& point) {
    const double m = e.margin(point);
    return {m <= 1.0 + kBoundaryTolerance, m};
}

Ellipsoid affine_image(const Ellipsoid& e, const Mat& W, const Vec& b) {
    detail::require_dim(W.cols() == e.dim(), "affine_image: W columns differ from ellipsoid dimension");
    detail::require_dim(W.rows() == b.size(), "affine_image: W rows differ from offset dimension");
    const Eigen::FullPivLU<Mat> lu(W);
    if (lu.rank() < W.rows()) throw DomainError("affine_image: W is rank deficient");
    const Mat wl = W * e.shape_factor();
    return Ellipsoid(W * e.center() + b, wl * wl.transpose());
}

double log_volume(const Ellipsoid& e) { return e.log_volume(); }

Vec sample(const Ellipsoid& e, SampleMode mode, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const int d = e.dim();
    Vec u(d);
    double norm = 0.0;
    do {
        for (int i = 0; i < d; ++i) u(i) = normal(rng);
        norm = u.norm();
    } while (norm == 0.0);
    u /= norm;
    if (mode == SampleMode::Interior) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        u *= std::pow(unif(rng), 1.0 / d);
    }
    return e.center() + e.shape_factor() * u;
}

nlohmann::json to_json(const Ellipsoid& e) {
    nlohmann::json j;
    j["center"] = std::vector<double>(e.center().data(), e.center().data() + e.dim());
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < e.dim(); ++r) {
        std::vector<double> row(e.dim());
        for (int c = 0; c < e.dim(); ++c) row[c] = e.shape()(r, c);
        rows.push_back(row);
    }
    j["shape"] = rows;
    return j;
}

Ellipsoid ellipsoid_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("center") || !j.contains("shape")) {
        throw ParseError("ellipsoid: expected object with 'center' and 'shape'");
    }
    const auto& jc = j.at("center");
    const auto& js = j.at("shape");
    if (!jc.is_array()) throw ParseError("ellipsoid.center: expected array");
    if (!js.is_array() || js.size() != jc.size()) {
        throw ParseError("ellipsoid.shape: expected square array matching center");
    }
    const int d = static_cast<int>(jc.size());
    Vec center(d);
    Mat shape(d, d);
    for (int i = 0; i < d; ++i) {
        if (!jc[i].is_number()) throw ParseError("ellipsoid.center[" + std::to_string(i) + "]: not a number");
        center(i) = jc[i].get<double>();
        if (!js[i].is_array() || static_cast<int>(js[i].size()) != d) {
            throw ParseError("ellipsoid.shape[" + std::to_string(i) + "]: wrong row length");
        }
        for (int k = 0; k < d; ++k) {
            if (!js[i][k].is_number()) {
                throw ParseError("ellipsoid.shape[" + std::to_string(i) + "][" + std::to_string(k) +
                                 "]: not a number");
            }
            shape(i, k) = js[i][k].get<double>();
        }
    }
    return Ellipsoid(center, shape);
}

}  // namespace nnad
