#pragma once

#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "nnad/ellipsoid.hpp"
#include "nnad/relu_net.hpp"
#include "nnad/types.hpp"

namespace nnad {

struct StackedDims {
    std::vector<int> input_sizes;   // n_1 .. n_q
    int n_gamma = 0;                // sum of n_i, equals N_0
    int q = 0;
    std::vector<int> layer_widths;  // N_0 .. N_l
    int hidden = 0;                 // sum of N_1 .. N_l
    int n_z = 0;                    // sum of N_0 .. N_l
    int n_pi = 0;
};

/**
 * Concatenated form of a ReLU network on z = [z^0; z^1; ...; z^l]:
 *   B z = max(0, A z + b),   output = W_out S^l z + b_out.
 *
 * `selectors[t]` is S^t (N_t x N_z); `input_selectors[i]` is E_i, an
 * (n_i + 1) x (N_z + 1) matrix picking [gamma_i; 1] out of [z; 1].
 */
struct StackedForm {
    Mat A;
    Mat B;
    Vec b;
    std::vector<Mat> selectors;
    std::vector<Mat> input_selectors;
    Mat w_out;
    Vec b_out;
    StackedDims dims;

    /// First row/column of input block i inside z.
    int input_offset(int i) const;
    /// Dimension of the homogeneous vector [z; 1].
    int lifted_dim() const { return dims.n_z + 1; }
};

StackedForm stack(const ReluNetwork& net, const std::vector<int>& input_sizes);

/// The stacked vector z of a forward pass.
Vec stacked_state(const ReluNetwork& net, const Vec& input);

/// [z; 1].
Vec lifted(const Vec& z);

/**
 * M_i = E_i^T [ -P, P mu ; mu^T P, 1 - mu^T P mu ] E_i with P = Sigma^{-1}.
 * Its quadratic form at [z; 1] equals 1 - margin of the i-th input block.
 */
Mat input_qc(const Mat& selector, const Ellipsoid& ellipsoid);

/// Single QC for the whole stacked input: sum_i margin_i <= q.
Mat single_input_qc(const std::vector<Ellipsoid>& ellipsoids, const StackedForm& stacked);

/// Pre-activation interval for every hidden neuron, in stacked order.
struct PreactivationBounds {
    Vec lower;
    Vec upper;

    bool stably_active(int j) const { return lower(j) >= 0.0; }
    bool stably_inactive(int j) const { return upper(j) <= 0.0; }
};

/// Interval propagation of the input ellipsoids' bounding boxes.
PreactivationBounds preactivation_bounds(const ReluNetwork& net,
                                         const std::vector<Ellipsoid>& input_ellipsoids);

/**
 * Diagonal ReLU multipliers, one entry per hidden neuron:
 *   lambda (free sign)   for y (y - x) = 0,
 *   nu >= 0              for y - x >= 0,
 *   eta >= 0             for y >= 0.
 * With pre-activation bounds, nu is sign-free on stably active neurons, eta is
 * sign-free on stably inactive ones, and rho >= 0 weighs (x - l)(u - x) >= 0.
 */
struct ReluQcMultipliers {
    Vec lambda;
    Vec nu;
    Vec eta;
    Vec rho;  // empty unless pre-activation bounds are used

    static ReluQcMultipliers zeros(int hidden, bool with_bounds = false);
};

/// Checks sizes and sign constraints; throws DomainError on a negative nu/eta/rho
/// entry that is required nonnegative.
void validate_multipliers(const ReluQcMultipliers& m, int hidden,
                          const PreactivationBounds* bounds = nullptr, double tol = 0.0);

/// Q matrix of size (2d + 1) on [x; y; 1] (x pre-activation, y post-activation).
Mat activation_multiplier_matrix(const ReluQcMultipliers& m,
                                 const PreactivationBounds* bounds = nullptr);

/// M_mid(Q) = [A b; B 0; 0 1]^T Q [A b; B 0; 0 1], plus the interval term when bounds are given.
Mat activation_qc(const StackedForm& stacked, const ReluQcMultipliers& m,
                  const PreactivationBounds* bounds = nullptr);

/// M_out = [W S^l, b; 0, 1]^T [U^2, U V; V^T U, V^T V - 1] [W S^l, b; 0, 1].
Mat output_qc(const StackedForm& stacked, const Mat& U, const Vec& V);

/// E(-U^{-1} V, U^{-2}); throws NumericalError if U is singular.
Ellipsoid output_ellipsoid(const Mat& U, const Vec& V);

/// JSON bundle of the stacked form and QC matrices for solver-independent inspection.
nlohmann::json qc_bundle_json(const StackedForm& stacked, std::span<const Mat> input_qcs,
                              const std::optional<Mat>& m_mid, const std::optional<Mat>& m_out);

nlohmann::json matrix_to_json(const Mat& m);

}  // namespace nnad
