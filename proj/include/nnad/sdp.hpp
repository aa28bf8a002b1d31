#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nnad/types.hpp"

namespace nnad::sdp {

/// coef * (p_u p_v^T + p_v p_u^T) / 2, with p_u, p_v columns of the block's vector pool.
struct SymTerm {
    int u = 0;
    int v = 0;
    double coef = 0.0;
};

/**
 * Affine symmetric matrix function F(x) = F0 + sum_i x_i F_i, with every F_i
 * given as a short sum of symmetric dyads over a shared vector pool. The
 * low-rank form keeps Hessian assembly at O(pool^2 * dim + terms^2).
 */
struct AffineBlock {
    int dim = 0;
    Mat constant;                              // F0, dim x dim
    Mat pool;                                  // dim x P
    std::vector<std::vector<SymTerm>> coeffs;  // one list per decision variable (may be empty)

    AffineBlock() = default;
    AffineBlock(int dim, int num_vars);

    /// Appends a pool vector and returns its column index.
    int add_vector(const Vec& v);
    /// Returns the pool index of unit vector e_r (created on first use).
    int unit(int r);
    void add_term(int var, int u, int v, double coef);

    Mat evaluate(const Vec& x) const;
    Mat coefficient(int var) const;

private:
    std::vector<int> unit_index_;
};

/**
 * minimize   c^T x - sum_{b in objective_logdet} logdet(F_b(x))
 * subject to F_b(x) > 0 for b in constraints,  x_i > 0 for i in nonnegative.
 */
struct Problem {
    int num_vars = 0;
    std::vector<AffineBlock> constraints;
    std::vector<AffineBlock> objective_logdet;
    std::vector<int> nonnegative;
    Vec linear_objective;
    /// Starting point; must be strictly feasible for all constraints except
    /// those listed in `phase1_blocks`, and strictly positive on `nonnegative`.
    Vec start;
    std::vector<int> phase1_blocks;
};

enum class Status { Optimal, Infeasible, NumericalFailure, IterationLimit };

std::string to_string(Status s);

struct Settings {
    double gap_tolerance = 1e-8;
    double barrier_growth = 20.0;
    int max_newton_steps = 600;
    /// Phase one stops once every phase-one block has minimum eigenvalue above
    /// this fraction of its scale.
    double phase1_margin = 1e-6;
};

struct Result {
    Status status = Status::NumericalFailure;
    Vec x;
    double objective = 0.0;
    double gap_bound = 0.0;
    int newton_steps = 0;
    std::string message;
};

/// Contract every conic backend satisfies.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual bool supports_logdet() const = 0;
    /// False means calls must be serialized by the caller.
    virtual bool thread_safe() const = 0;
    virtual Result solve(const Problem& problem) const = 0;
};

/// Primal log-barrier path following with damped Newton steps and a phase-one
/// search for a strictly feasible point. Iterates stay strictly feasible.
class BarrierBackend final : public Backend {
public:
    explicit BarrierBackend(Settings settings = {}) : settings_(settings) {}
    std::string name() const override { return "barrier"; }
    bool supports_logdet() const override { return true; }
    bool thread_safe() const override { return true; }
    Result solve(const Problem& problem) const override;

private:
    Settings settings_;
};

/// Looks up a backend by name ("barrier"); throws ConfigError for unknown names.
std::shared_ptr<const Backend> make_backend(const std::string& name);

/// Backend named by NNAD_SDP_BACKEND, defaulting to "barrier".
std::shared_ptr<const Backend> backend_from_environment();

}  // namespace nnad::sdp
