#include <cmath>
#include <cstdlib>
#include <algorithm>
#include <limits>
#include <sstream>

#include "nnad/sdp.hpp"

namespace nnad::sdp {

AffineBlock::AffineBlock(int dim_, int num_vars)
    : dim(dim_), constant(Mat::Zero(dim_, dim_)), pool(dim_, 0), coeffs(num_vars),
      unit_index_(dim_, -1) {}

int AffineBlock::add_vector(const Vec& v) {
    detail::require_dim(v.size() == dim, "AffineBlock::add_vector: dimension mismatch");
    pool.conservativeResize(dim, pool.cols() + 1);
    pool.col(pool.cols() - 1) = v;
    return static_cast<int>(pool.cols()) - 1;
}

int AffineBlock::unit(int r) {
    if (unit_index_.size() != static_cast<std::size_t>(dim)) unit_index_.assign(dim, -1);
    if (unit_index_[r] < 0) unit_index_[r] = add_vector(Vec::Unit(dim, r));
    return unit_index_[r];
}

void AffineBlock::add_term(int var, int u, int v, double coef) {
    if (coef == 0.0) return;
    coeffs.at(var).push_back({u, v, coef});
}

Mat AffineBlock::evaluate(const Vec& x) const {
    const int p = static_cast<int>(pool.cols());
    Mat c = Mat::Zero(p, p);
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
        if (x(i) == 0.0) continue;
        for (const auto& t : coeffs[i]) {
            c(t.u, t.v) += 0.5 * x(i) * t.coef;
            c(t.v, t.u) += 0.5 * x(i) * t.coef;
        }
    }
    return constant + pool * c * pool.transpose();
}

Mat AffineBlock::coefficient(int var) const {
    Vec x = Vec::Zero(static_cast<Eigen::Index>(coeffs.size()));
    x(var) = 1.0;
    return evaluate(x) - constant;
}

std::string to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::NumericalFailure: return "numerical_failure";
        case Status::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

namespace {

struct BlockRef {
    const AffineBlock* block;
    double weight;     // multiplies -logdet
    bool objective;    // scaled by t
};

class BarrierFunction {
public:
    BarrierFunction(const Problem& p) : p_(p) {
        for (const auto& b : p.constraints) refs_.push_back({&b, 1.0, false});
        for (const auto& b : p.objective_logdet) refs_.push_back({&b, 1.0, true});
        for (const auto& b : p.constraints) theta_ += b.dim;
        theta_ += static_cast<double>(p.nonnegative.size());
        active_.resize(refs_.size());
        for (std::size_t k = 0; k < refs_.size(); ++k) {
            for (int i = 0; i < p.num_vars; ++i) {
                if (!refs_[k].block->coeffs[i].empty()) active_[k].push_back(i);
            }
        }
    }

    double theta() const { return theta_; }

    bool feasible(const Vec& x) const {
        for (int i : p_.nonnegative) if (!(x(i) > 0.0)) return false;
        for (const auto& r : refs_) {
            const Eigen::LLT<Mat> llt(r.block->evaluate(x));
            if (llt.info() != Eigen::Success) return false;
            if (!(llt.matrixLLT().diagonal().array() > 0.0).all()) return false;
        }
        return true;
    }

    // Returns +inf outside the domain.
    double value(const Vec& x, double t) const {
        double f = t * p_.linear_objective.dot(x);
        for (int i : p_.nonnegative) {
            if (!(x(i) > 0.0)) return std::numeric_limits<double>::infinity();
            f -= std::log(x(i));
        }
        for (const auto& r : refs_) {
            const Eigen::LLT<Mat> llt(r.block->evaluate(x));
            if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
            const Vec diag = llt.matrixLLT().diagonal();
            if (!(diag.array() > 0.0).all()) return std::numeric_limits<double>::infinity();
            const double logdet = 2.0 * diag.array().log().sum();
            f -= (r.objective ? t : 1.0) * logdet;
        }
        return f;
    }

    // Gradient and Hessian of value(., t); false if x is outside the domain.
    bool derivatives(const Vec& x, double t, Vec& g, Mat& h) const {
        const int n = p_.num_vars;
        g = t * p_.linear_objective;
        h = Mat::Zero(n, n);
        for (int i : p_.nonnegative) {
            if (!(x(i) > 0.0)) return false;
            g(i) -= 1.0 / x(i);
            h(i, i) += 1.0 / (x(i) * x(i));
        }
        for (std::size_t k = 0; k < refs_.size(); ++k) {
            const AffineBlock& b = *refs_[k].block;
            const double w = refs_[k].objective ? t : 1.0;
            const Eigen::LLT<Mat> llt(b.evaluate(x));
            if (llt.info() != Eigen::Success) return false;
            const Mat y = llt.matrixL().solve(b.pool);
            const Mat kk = y.transpose() * y;  // pool^T F^{-1} pool
            const auto& act = active_[k];
            for (std::size_t ai = 0; ai < act.size(); ++ai) {
                const int i = act[ai];
                double gi = 0.0;
                for (const auto& s : b.coeffs[i]) gi += s.coef * kk(s.u, s.v);
                g(i) -= w * gi;
                for (std::size_t aj = ai; aj < act.size(); ++aj) {
                    const int j = act[aj];
                    double hij = 0.0;
                    for (const auto& s : b.coeffs[i]) {
                        for (const auto& r : b.coeffs[j]) {
                            hij += s.coef * r.coef *
                                   (kk(s.u, r.v) * kk(s.v, r.u) + kk(s.u, r.u) * kk(s.v, r.v));
                        }
                    }
                    hij *= 0.5 * w;
                    h(i, j) += hij;
                    if (i != j) h(j, i) += hij;
                }
            }
        }
        return true;
    }

    double objective(const Vec& x) const {
        double f = p_.linear_objective.dot(x);
        for (const auto& b : p_.objective_logdet) {
            const Eigen::LLT<Mat> llt(b.evaluate(x));
            f -= 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        }
        return f;
    }

private:
    const Problem& p_;
    std::vector<BlockRef> refs_;
    std::vector<std::vector<int>> active_;
    double theta_ = 0.0;
};

Vec newton_direction(const Mat& h, const Vec& g) {
    Eigen::LDLT<Mat> ldlt(h);
    Vec dx = ldlt.solve(-g);
    if (ldlt.info() == Eigen::Success && dx.allFinite() && ldlt.isPositive()) return dx;
    // Regularize a numerically singular Hessian.
    const double scale = std::max(1e-300, h.diagonal().cwiseAbs().maxCoeff());
    for (double reg = 1e-14; reg < 1e-2; reg *= 100.0) {
        Mat hr = h;
        hr.diagonal().array() += reg * scale;
        ldlt.compute(hr);
        dx = ldlt.solve(-g);
        if (ldlt.info() == Eigen::Success && dx.allFinite()) return dx;
    }
    return Vec::Zero(g.size());
}

enum class CenterOutcome { Centered, SlowStage, Stalled, StepLimit, Unbounded, EarlyExit };

// Newton steps allowed for one centering before the stage counts as stalled.
constexpr int kStageSteps = 60;
// Squared Newton decrement at which a point counts as centered.
constexpr double kCenteredDecrement = 1e-6;
// A stage that runs out of steps below this decrement is close enough to the
// path to move on (the barrier can decrease without bound along a ray).
constexpr double kNearlyCenteredDecrement = 1e-3;

// Damped Newton centering at fixed t. `early_exit` is polled after each step.
template <typename EarlyExit>
CenterOutcome center(const BarrierFunction& f, Vec& x, double t, int stage_steps, int& steps_left, int& steps_used,
                     EarlyExit&& early_exit, double* last_decrement = nullptr) {
    Vec g;
    Mat h;
    for (int stage = 0;; ++stage) {
        if (steps_left-- <= 0) return CenterOutcome::StepLimit;
        if (stage >= stage_steps) return CenterOutcome::SlowStage;
        ++steps_used;
        if (!f.derivatives(x, t, g, h)) return CenterOutcome::Stalled;
        const Vec dx = newton_direction(h, g);
        const double slope = g.dot(dx);
        const double decrement2 = -slope;
        if (last_decrement) *last_decrement = decrement2;
        if (!(decrement2 > kCenteredDecrement)) return CenterOutcome::Centered;
        const double f0 = f.value(x, t);
        double alpha = 1.0;
        bool accepted = false;
        while (alpha > 1e-14) {
            const Vec trial = x + alpha * dx;
            const double ft = f.value(trial, t);
            if (std::isfinite(ft) && ft <= f0 + 0.25 * alpha * slope + 1e-15 * std::abs(f0)) {
                x = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) return CenterOutcome::Stalled;
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e14) return CenterOutcome::Unbounded;
        if (early_exit(x)) return CenterOutcome::EarlyExit;
    }
}

// Barrier weight that best balances objective and barrier gradients at x,
// i.e. argmin_t || t g_obj + g_bar ||_{H_bar^{-1}}, clamped to [lo, hi].
double initial_weight(const BarrierFunction& f, const Vec& x, double lo, double hi) {
    Vec g0, g1;
    Mat h0, h1;
    if (!f.derivatives(x, 0.0, g0, h0) || !f.derivatives(x, 1.0, g1, h1)) return lo;
    const Vec gc = g1 - g0;
    const Eigen::LDLT<Mat> ldlt(h0);
    if (ldlt.info() != Eigen::Success) return lo;
    const Vec hc = ldlt.solve(gc);
    const double den = gc.dot(hc);
    if (!(den > 0.0) || !std::isfinite(den)) return lo;
    const double t = -hc.dot(g0) / den;
    return std::clamp(std::isfinite(t) ? t : lo, lo, hi);
}

double min_eigenvalue(const Mat& m) {
    return Eigen::SelfAdjointEigenSolver<Mat>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace

Result BarrierBackend::solve(const Problem& problem) const {
    Result res;
    const int n = problem.num_vars;
    detail::require_dim(problem.start.size() == n && problem.linear_objective.size() == n,
                        "sdp::solve: start/objective size mismatch");
    for (const auto& b : problem.constraints) {
        detail::require_dim(static_cast<int>(b.coeffs.size()) == n, "sdp::solve: block variable count mismatch");
    }
    for (const auto& b : problem.objective_logdet) {
        detail::require_dim(static_cast<int>(b.coeffs.size()) == n, "sdp::solve: block variable count mismatch");
    }
    int steps_left = settings_.max_newton_steps;
    Vec x = problem.start;

    // Phase one: minimize s subject to F_b(x) + s I > 0 on the blocks that the
    // start point does not already satisfy strictly.
    std::vector<int> p1;
    for (int b : problem.phase1_blocks) {
        if (min_eigenvalue(problem.constraints.at(b).evaluate(x)) <= 0.0) p1.push_back(b);
    }
    if (!p1.empty()) {
        Problem aug;
        aug.num_vars = n + 1;
        aug.nonnegative = problem.nonnegative;
        aug.linear_objective = Vec::Zero(n + 1);
        aug.linear_objective(n) = 1.0;
        double worst = 0.0;
        double scale = 1.0;
        for (std::size_t k = 0; k < problem.constraints.size(); ++k) {
            AffineBlock b = problem.constraints[k];
            b.coeffs.emplace_back();
            if (std::find(p1.begin(), p1.end(), static_cast<int>(k)) != p1.end()) {
                for (int r = 0; r < b.dim; ++r) {
                    const int u = b.unit(r);
                    b.add_term(n, u, u, 1.0);
                }
                worst = std::max(worst, -min_eigenvalue(problem.constraints[k].evaluate(x)));
                scale = std::max(scale, problem.constraints[k].constant.cwiseAbs().maxCoeff());
            }
            aug.constraints.push_back(std::move(b));
        }
        const double target = -settings_.phase1_margin * scale;
        // s > target - worst - 1 keeps phase one bounded when s could fall without limit.
        AffineBlock floor(1, n + 1);
        floor.constant(0, 0) = worst + 1.0 - target;
        floor.add_term(n, floor.unit(0), floor.unit(0), 1.0);
        aug.constraints.push_back(std::move(floor));
        Vec xa(n + 1);
        xa << x, worst + 1.0;
        const BarrierFunction f1(aug);
        auto reached = [&](const Vec& v) { return v(n) < target; };
        double t = f1.theta() / (worst + 1.0);
        double last_s = xa(n);
        int idle_stages = 0;
        for (;;) {
            const CenterOutcome oc = center(f1, xa, t, kStageSteps, steps_left, res.newton_steps, reached);
            if (oc == CenterOutcome::EarlyExit || reached(xa)) break;
            if (oc == CenterOutcome::StepLimit) {
                res.status = Status::IterationLimit;
                res.message = "phase one: Newton step limit reached";
                res.x = xa.head(n);
                return res;
            }
            if (oc == CenterOutcome::Unbounded) {
                res.status = Status::NumericalFailure;
                res.message = "phase one: iterates diverged";
                res.x = xa.head(n);
                return res;
            }
            // On the central path s - theta/t is a lower bound on the optimal s.
            const bool certified = oc == CenterOutcome::Centered && xa(n) - f1.theta() / t > 0.0;
            if (oc == CenterOutcome::Centered) {
                const double progress = last_s - xa(n);
                idle_stages = progress > 1e-9 * std::max(1.0, std::abs(last_s)) ? 0 : idle_stages + 1;
                last_s = xa(n);
            }
            if (certified || f1.theta() / t < 1e-10 * std::max(1.0, scale) || idle_stages >= 3) {
                std::ostringstream os;
                os << "phase one: no strictly feasible point (best s = " << xa(n) << ")";
                res.status = Status::Infeasible;
                res.message = os.str();
                res.x = xa.head(n);
                return res;
            }
            // A stage that ran out of steps keeps its t so centering can finish.
            if (oc != CenterOutcome::SlowStage) t *= settings_.barrier_growth;
        }
        x = xa.head(n);
    }

    const BarrierFunction f(problem);
    if (!f.feasible(x)) {
        res.status = Status::NumericalFailure;
        res.message = "start point is not strictly feasible";
        res.x = x;
        return res;
    }
    auto never = [](const Vec&) { return false; };
    double t = initial_weight(f, x, 1e-3, f.theta() / settings_.gap_tolerance);
    double last_gap = std::numeric_limits<double>::infinity();
    for (;;) {
        double decrement = std::numeric_limits<double>::infinity();
        CenterOutcome oc = center(f, x, t, kStageSteps, steps_left, res.newton_steps, never, &decrement);
        if (oc == CenterOutcome::SlowStage && decrement < kNearlyCenteredDecrement) oc = CenterOutcome::Centered;
        if (oc == CenterOutcome::Centered) last_gap = f.theta() / t;
        if (oc == CenterOutcome::Unbounded) {
            res.status = Status::NumericalFailure;
            res.message = "objective appears unbounded";
            break;
        }
        if (oc == CenterOutcome::StepLimit) {
            res.status = Status::IterationLimit;
            res.message = "Newton step limit reached";
            break;
        }
        if (oc == CenterOutcome::SlowStage && last_gap > 1e3 * settings_.gap_tolerance) continue;
        if (oc == CenterOutcome::Stalled || oc == CenterOutcome::SlowStage) {
            // Loss of precision deep on the central path; the iterate is still strictly feasible.
            res.status = last_gap <= 1e3 * settings_.gap_tolerance ? Status::Optimal : Status::NumericalFailure;
            res.message = "line search stalled";
            break;
        }
        if (f.theta() / t <= settings_.gap_tolerance) {
            res.status = Status::Optimal;
            break;
        }
        t *= settings_.barrier_growth;
    }
    res.x = x;
    res.gap_bound = last_gap;
    res.objective = f.objective(x);
    return res;
}

std::shared_ptr<const Backend> make_backend(const std::string& name) {
    if (name == "barrier") return std::make_shared<BarrierBackend>();
    throw ConfigError("unknown SDP backend '" + name + "' (available: barrier)");
}

std::shared_ptr<const Backend> backend_from_environment() {
    const char* env = std::getenv("NNAD_SDP_BACKEND");
    return make_backend(env && *env ? std::string(env) : std::string("barrier"));
}

}  // namespace nnad::sdp
