#pragma once

#include <iosfwd>
#include <json.hpp>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "nnad/ellipsoid.hpp"
#include "nnad/qc.hpp"
#include "nnad/relu_net.hpp"
#include "nnad/sdp.hpp"

namespace nnad {

enum class Objective { Trace, LogDet };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct CertifierOptions {
    Objective objective = Objective::Trace;
    /// U >= u_floor * I keeps the output ellipsoid E(-U^{-1}V, U^{-2}) well defined.
    double u_floor = 1e-6;
    /// U <= u_cap * I bounds the problem when the output set is degenerate
    /// (radius floor 1 / u_cap).
    double u_cap = 1e4;
    /// Accept a certificate only if the recomputed lambda_max(M) is at most this.
    double feasibility_tolerance = 1e-7;
    double sign_tolerance = 1e-9;
    bool interval_tightening = false;
    /// Solve in coordinates where the input centers and nominal output sit at the
    /// origin; the certificate is mapped back and re-verified in the original ones.
    bool recenter = true;
    std::shared_ptr<const sdp::Backend> backend;  // null: NNAD_SDP_BACKEND or "barrier"
};

/// Decision variables of the output-covering LMI.
struct DecisionValues {
    Vec tau;
    ReluQcMultipliers multipliers;
    Mat U;
    Vec V;
};

/// Number of decision variables of each kind, in solver order.
struct VariableLayout {
    int tau = 0;
    int hidden = 0;
    bool interval = false;
    int n_pi = 0;

    int lambda_offset() const { return tau; }
    int nu_offset() const { return tau + hidden; }
    int eta_offset() const { return tau + 2 * hidden; }
    int rho_offset() const { return tau + 3 * hidden; }
    int u_offset() const { return tau + (interval ? 4 : 3) * hidden; }
    int u_count() const { return n_pi * (n_pi + 1) / 2; }
    int v_offset() const { return u_offset() + u_count(); }
    int total() const { return v_offset() + n_pi; }
};

struct LmiProblem {
    StackedForm stacked;
    std::vector<Mat> input_qcs;  // one QC (and one tau) per entry
    std::optional<PreactivationBounds> bounds;
    Objective objective = Objective::Trace;
    double u_floor = 1e-6;
    double u_cap = 1e4;

    VariableLayout layout() const;
    const PreactivationBounds* bounds_ptr() const { return bounds ? &*bounds : nullptr; }
};

/// One QC per input ellipsoid (multi-ellipsoid form) or a single pooled QC.
LmiProblem make_lmi_problem(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                            const CertifierOptions& opts, bool single_input);

/**
 * The symmetric (N_z + 1 + n_pi) matrix
 *   [ sum tau_i M_i + M_mid(Q) - e e^T ,  F^T ]
 *   [ F                                ,  -I  ],  F = [0, U W^l, U b^l + V],
 * which is negative semidefinite iff sum tau_i M_i + M_mid + M_out is.
 */
Mat assemble(const LmiProblem& problem, const DecisionValues& values);

DecisionValues unpack(const LmiProblem& problem, const Vec& x);
Vec pack(const LmiProblem& problem, const DecisionValues& values);

/// The problem in the backend's PSD-block form (-M >= 0, U - floor I >= 0, cap I - U >= 0).
sdp::Problem to_backend_problem(const LmiProblem& problem);

/// Sparse-triplet text dump of a backend problem: one "block var row col value"
/// line per upper-triangular nonzero, var 0 being the constant term.
void write_lmi_triplets(const sdp::Problem& problem, std::ostream& out);

struct CertifiedBound {
    std::optional<Ellipsoid> ellipsoid;
    DecisionValues values;
    sdp::Status solver_status = sdp::Status::NumericalFailure;
    std::string message;
    double objective = 0.0;
    double log_volume = 0.0;
    double max_eigenvalue = 0.0;  // recomputed lambda_max(M) at the solution
    double min_sign_slack = 0.0;  // smallest value among sign-constrained variables
    double gap_bound = 0.0;
    int newton_steps = 0;
    bool accepted = false;
};

/// Solves the LMI and verifies the certificate independently of the backend.
CertifiedBound solve(const LmiProblem& problem, const CertifierOptions& opts);

/// Prediction bound for q input ellipsoids, one QC per ellipsoid.
CertifiedBound certify(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                       const CertifierOptions& opts = {});

/// Same pipeline with a single QC on the stacked input (one tau).
CertifiedBound certify_single(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                              const CertifierOptions& opts = {});

/// Network outputs for inputs drawn uniformly and independently from each ellipsoid;
/// one output per row.
Mat monte_carlo_output_set(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs, int n_samples,
                           std::mt19937_64& rng);

nlohmann::json to_json(const CertifiedBound& bound);

}  // namespace nnad
