#include "nnad/confidence.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace nnad {

namespace {

constexpr int kMaxSeriesTerms = 10000;
constexpr double kSeriesEps = 1e-16;

// P(a, x) by its power series; converges fast for x < a + 1.
double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    double ap = a;
    for (int n = 0; n < kMaxSeriesTerms; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * kSeriesEps) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) = 1 - P(a, x) by the modified Lentz continued fraction; x >= a + 1.
double gamma_q_continued_fraction(double a, double x) {
    constexpr double tiny = std::numeric_limits<double>::min() / kSeriesEps;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxSeriesTerms; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kSeriesEps) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_p(double a, double x) {
    if (!(a > 0.0)) throw DomainError("regularized_gamma_p: a must be positive");
    if (x <= 0.0) return 0.0;
    if (x < a + 1.0) return gamma_p_series(a, x);
    return 1.0 - gamma_q_continued_fraction(a, x);
}

double confidence_scale(int p, double p_bar) {
    if (p < 1) throw DomainError("confidence_scale: dimension p must be >= 1");
    if (!(p_bar > 0.0 && p_bar < 1.0)) {
        std::ostringstream os;
        os << "confidence_scale: p_bar must lie in (0,1), got " << p_bar;
        throw DomainError(os.str());
    }
    const double a = 0.5 * p;

    // Solve P(a, x) = p_bar for x, then alpha = 2x. The CDF is increasing in x,
    // so a bracket plus Newton steps clipped to it always converges.
    double lo = 0.0;
    double hi = std::max(1.0, a);
    while (regularized_gamma_p(a, hi) < p_bar) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e8) throw NumericalError("confidence_scale: failed to bracket quantile");
    }

    const double tol = 1e-12 * std::min(p_bar, 1.0 - p_bar);
    double x = 0.5 * (lo + hi);
    double residual = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        residual = regularized_gamma_p(a, x) - p_bar;
        if (std::abs(residual) < tol) return 2.0 * x;
        if (residual > 0.0) hi = x; else lo = x;
        const double density = std::exp(-x + (a - 1.0) * std::log(x) - std::lgamma(a));
        double next = x - residual / density;
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, x)) return 2.0 * next;
        x = next;
    }
    if (std::abs(residual) < 1e-10) return 2.0 * x;
    std::ostringstream os;
    os << "confidence_scale: no convergence for p=" << p << ", p_bar=" << p_bar
       << " (residual " << residual << ")";
    throw NumericalError(os.str());
}

ConfidenceSpec make_confidence_spec(double p_bar, const Mat& sigma_v) {
    detail::require_dim(sigma_v.rows() == sigma_v.cols() && sigma_v.rows() > 0,
                        "make_confidence_spec: sigma_v must be square and nonempty");
    ConfidenceSpec spec;
    spec.p_bar = p_bar;
    spec.p = static_cast<int>(sigma_v.rows());
    spec.sigma_v = 0.5 * (sigma_v + sigma_v.transpose());
    spec.alpha = confidence_scale(spec.p, p_bar);
    spec.sigma_v_bar = spec.alpha * spec.sigma_v;
    [[maybe_unused]] const Ellipsoid check(Vec::Zero(spec.p), spec.sigma_v_bar);  // throws unless SPD
    return spec;
}

Ellipsoid confidence_ellipsoid(const ConfidenceSpec& spec, const Vec& center) {
    detail::require_dim(center.size() == spec.p,
                        "confidence_ellipsoid: center dimension differs from sensor dimension");
    return Ellipsoid(center, spec.sigma_v_bar);
}

}  // namespace nnad
