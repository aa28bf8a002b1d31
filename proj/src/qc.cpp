#include "nnad/qc.hpp"

#include <sstream>

namespace nnad {

int StackedForm::input_offset(int i) const {
    int off = 0;
    for (int k = 0; k < i; ++k) off += dims.input_sizes[k];
    return off;
}

StackedForm stack(const ReluNetwork& net, const std::vector<int>& input_sizes) {
    int n_gamma = 0;
    for (int n : input_sizes) {
        if (n <= 0) throw DimensionError("stack: input block sizes must be positive");
        n_gamma += n;
    }
    if (input_sizes.empty() || n_gamma != net.input_dim()) {
        std::ostringstream os;
        os << "stack: input partition sums to " << n_gamma << ", network input is " << net.input_dim();
        throw DimensionError(os.str());
    }

    StackedForm s;
    s.dims.input_sizes = input_sizes;
    s.dims.n_gamma = n_gamma;
    s.dims.q = static_cast<int>(input_sizes.size());
    const auto arch = net.arch();
    s.dims.layer_widths.assign(arch.begin(), arch.end() - 1);
    s.dims.hidden = net.hidden_neurons();
    s.dims.n_z = n_gamma + s.dims.hidden;
    s.dims.n_pi = net.output_dim();

    const int d = s.dims.hidden;
    const int nz = s.dims.n_z;
    const int layers = net.hidden_layers();
    s.A = Mat::Zero(d, nz);
    s.B = Mat::Zero(d, nz);
    s.b = Vec::Zero(d);
    int row = 0;
    int col = 0;
    for (int t = 0; t < layers; ++t) {
        const Mat& w = net.weights()[t];
        s.A.block(row, col, w.rows(), w.cols()) = w;
        s.b.segment(row, w.rows()) = net.biases()[t];
        row += static_cast<int>(w.rows());
        col += static_cast<int>(w.cols());
    }
    s.B.rightCols(d) = Mat::Identity(d, d);

    int off = 0;
    for (int t = 0; t <= layers; ++t) {
        const int nt = s.dims.layer_widths[t];
        Mat sel = Mat::Zero(nt, nz);
        sel.block(0, off, nt, nt) = Mat::Identity(nt, nt);
        s.selectors.push_back(std::move(sel));
        off += nt;
    }

    for (int i = 0; i < s.dims.q; ++i) {
        const int ni = input_sizes[i];
        Mat e = Mat::Zero(ni + 1, nz + 1);
        e.block(0, s.input_offset(i), ni, ni) = Mat::Identity(ni, ni);
        e(ni, nz) = 1.0;
        s.input_selectors.push_back(std::move(e));
    }
    s.w_out = net.weights().back();
    s.b_out = net.biases().back();
    return s;
}

Vec stacked_state(const ReluNetwork& net, const Vec& input) {
    const auto trace = net.forward_trace(input);
    int n = 0;
    for (std::size_t t = 0; t + 1 < trace.size(); ++t) n += static_cast<int>(trace[t].size());
    Vec z(n);
    int off = 0;
    for (std::size_t t = 0; t + 1 < trace.size(); ++t) {
        z.segment(off, trace[t].size()) = trace[t];
        off += static_cast<int>(trace[t].size());
    }
    return z;
}

Vec lifted(const Vec& z) {
    Vec v(z.size() + 1);
    v << z, 1.0;
    return v;
}

namespace {

// [ -P, P mu ; mu^T P, 1 - mu^T P mu ] for one ellipsoid.
Mat ellipsoid_form(const Ellipsoid& e) {
    const int n = e.dim();
    const Mat p = e.precision();
    const Vec pm = p * e.center();
    Mat k(n + 1, n + 1);
    k.topLeftCorner(n, n) = -p;
    k.topRightCorner(n, 1) = pm;
    k.bottomLeftCorner(1, n) = pm.transpose();
    k(n, n) = 1.0 - e.center().dot(pm);
    return k;
}

}  // namespace

Mat input_qc(const Mat& selector, const Ellipsoid& ellipsoid) {
    detail::require_dim(selector.rows() == ellipsoid.dim() + 1,
                        "input_qc: selector rows differ from ellipsoid dimension + 1");
    const Mat m = selector.transpose() * ellipsoid_form(ellipsoid) * selector;
    return 0.5 * (m + m.transpose());
}

Mat single_input_qc(const std::vector<Ellipsoid>& ellipsoids, const StackedForm& stacked) {
    detail::require_dim(static_cast<int>(ellipsoids.size()) == stacked.dims.q,
                        "single_input_qc: ellipsoid count differs from input partition");
    const int n = stacked.lifted_dim();
    Mat m = Mat::Zero(n, n);
    for (int i = 0; i < stacked.dims.q; ++i) {
        detail::require_dim(ellipsoids[i].dim() == stacked.dims.input_sizes[i],
                            "single_input_qc: ellipsoid " + std::to_string(i) + " dimension mismatch");
        m += input_qc(stacked.input_selectors[i], ellipsoids[i]);
    }
    // Each M_i carries +1 in the corner; the pooled constraint keeps q in total,
    // which is exactly the sum above.
    return m;
}

PreactivationBounds preactivation_bounds(const ReluNetwork& net,
                                         const std::vector<Ellipsoid>& input_ellipsoids) {
    Vec lo(net.input_dim());
    Vec hi(net.input_dim());
    int off = 0;
    for (const auto& e : input_ellipsoids) {
        const Vec r = e.shape().diagonal().cwiseSqrt();
        detail::require_dim(off + e.dim() <= net.input_dim(), "preactivation_bounds: too many input dims");
        lo.segment(off, e.dim()) = e.center() - r;
        hi.segment(off, e.dim()) = e.center() + r;
        off += e.dim();
    }
    detail::require_dim(off == net.input_dim(), "preactivation_bounds: input dims do not cover network input");

    PreactivationBounds out;
    out.lower.resize(net.hidden_neurons());
    out.upper.resize(net.hidden_neurons());
    int row = 0;
    for (int t = 0; t < net.hidden_layers(); ++t) {
        const Mat& w = net.weights()[t];
        const Vec c = 0.5 * (lo + hi);
        const Vec r = 0.5 * (hi - lo);
        const Vec pc = w * c + net.biases()[t];
        const Vec pr = w.cwiseAbs() * r;
        out.lower.segment(row, w.rows()) = pc - pr;
        out.upper.segment(row, w.rows()) = pc + pr;
        lo = (pc - pr).cwiseMax(0.0);
        hi = (pc + pr).cwiseMax(0.0);
        row += static_cast<int>(w.rows());
    }
    return out;
}

ReluQcMultipliers ReluQcMultipliers::zeros(int hidden, bool with_bounds) {
    ReluQcMultipliers m;
    m.lambda = Vec::Zero(hidden);
    m.nu = Vec::Zero(hidden);
    m.eta = Vec::Zero(hidden);
    if (with_bounds) m.rho = Vec::Zero(hidden);
    return m;
}

void validate_multipliers(const ReluQcMultipliers& m, int hidden, const PreactivationBounds* bounds,
                          double tol) {
    detail::require_dim(m.lambda.size() == hidden && m.nu.size() == hidden && m.eta.size() == hidden,
                        "ReLU multipliers: sizes differ from hidden neuron count");
    if (bounds) {
        detail::require_dim(m.rho.size() == hidden && bounds->lower.size() == hidden,
                            "ReLU multipliers: interval multipliers/bounds size mismatch");
    } else {
        detail::require_dim(m.rho.size() == 0, "ReLU multipliers: rho given without bounds");
    }
    for (int j = 0; j < hidden; ++j) {
        const bool nu_free = bounds && bounds->stably_active(j);
        const bool eta_free = bounds && bounds->stably_inactive(j);
        if (!nu_free && m.nu(j) < -tol) {
            throw DomainError("ReLU multipliers: nu[" + std::to_string(j) + "] is negative");
        }
        if (!eta_free && m.eta(j) < -tol) {
            throw DomainError("ReLU multipliers: eta[" + std::to_string(j) + "] is negative");
        }
        if (bounds && m.rho(j) < -tol) {
            throw DomainError("ReLU multipliers: rho[" + std::to_string(j) + "] is negative");
        }
    }
}

Mat activation_multiplier_matrix(const ReluQcMultipliers& m, const PreactivationBounds* bounds) {
    const int d = static_cast<int>(m.lambda.size());
    validate_multipliers(m, d, bounds);
    Mat q = Mat::Zero(2 * d + 1, 2 * d + 1);
    const int one = 2 * d;
    for (int j = 0; j < d; ++j) {
        const int x = j;
        const int y = d + j;
        q(x, y) = q(y, x) = m.lambda(j);
        q(y, y) = -2.0 * m.lambda(j);
        q(x, one) = q(one, x) = -m.nu(j);
        q(y, one) = q(one, y) = m.nu(j) + m.eta(j);
        if (bounds) {
            const double l = bounds->lower(j);
            const double u = bounds->upper(j);
            q(x, x) -= m.rho(j);
            q(x, one) += 0.5 * m.rho(j) * (l + u);
            q(one, x) = q(x, one);
            q(one, one) -= m.rho(j) * l * u;
        }
    }
    return q;
}

Mat activation_qc(const StackedForm& stacked, const ReluQcMultipliers& m,
                  const PreactivationBounds* bounds) {
    const int d = stacked.dims.hidden;
    const int n = stacked.lifted_dim();
    detail::require_dim(m.lambda.size() == d, "activation_qc: multiplier count differs from hidden neurons");
    Mat c = Mat::Zero(2 * d + 1, n);
    c.topLeftCorner(d, n - 1) = stacked.A;
    c.block(0, n - 1, d, 1) = stacked.b;
    c.block(d, 0, d, n - 1) = stacked.B;
    c(2 * d, n - 1) = 1.0;
    const Mat out = c.transpose() * activation_multiplier_matrix(m, bounds) * c;
    return 0.5 * (out + out.transpose());
}

Mat output_qc(const StackedForm& stacked, const Mat& U, const Vec& V) {
    const int np = stacked.dims.n_pi;
    const int n = stacked.lifted_dim();
    detail::require_dim(U.rows() == np && U.cols() == np && V.size() == np, "output_qc: U/V size mismatch");
    Mat g = Mat::Zero(np + 1, n);
    g.topLeftCorner(np, n - 1) = stacked.w_out * stacked.selectors.back();
    g.block(0, n - 1, np, 1) = stacked.b_out;
    g(np, n - 1) = 1.0;
    Mat mid(np + 1, np + 1);
    mid.topLeftCorner(np, np) = U * U;
    mid.topRightCorner(np, 1) = U * V;
    mid.bottomLeftCorner(1, np) = (U * V).transpose();
    mid(np, np) = V.squaredNorm() - 1.0;
    const Mat out = g.transpose() * mid * g;
    return 0.5 * (out + out.transpose());
}

Ellipsoid output_ellipsoid(const Mat& U, const Vec& V) {
    detail::require_dim(U.rows() == U.cols() && U.rows() == V.size(), "output_ellipsoid: U/V size mismatch");
    const Mat us = 0.5 * (U + U.transpose());
    const Eigen::SelfAdjointEigenSolver<Mat> eig(us);
    const Vec ev = eig.eigenvalues();
    if (ev.cwiseAbs().minCoeff() <= 1e-14 * std::max(1.0, ev.cwiseAbs().maxCoeff())) {
        throw NumericalError("output_ellipsoid: U is singular");
    }
    const Mat uinv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return Ellipsoid(-uinv * V, uinv * uinv);
}

nlohmann::json matrix_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.cols());
        for (int c = 0; c < m.cols(); ++c) row[c] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

nlohmann::json qc_bundle_json(const StackedForm& stacked, std::span<const Mat> input_qcs,
                              const std::optional<Mat>& m_mid, const std::optional<Mat>& m_out) {
    nlohmann::json j;
    j["dims"] = {{"input_sizes", stacked.dims.input_sizes},
                 {"n_gamma", stacked.dims.n_gamma},
                 {"q", stacked.dims.q},
                 {"layer_widths", stacked.dims.layer_widths},
                 {"hidden", stacked.dims.hidden},
                 {"n_z", stacked.dims.n_z},
                 {"n_pi", stacked.dims.n_pi}};
    j["A"] = matrix_to_json(stacked.A);
    j["B"] = matrix_to_json(stacked.B);
    j["b"] = std::vector<double>(stacked.b.data(), stacked.b.data() + stacked.b.size());
    j["W_out"] = matrix_to_json(stacked.w_out);
    j["b_out"] = std::vector<double>(stacked.b_out.data(), stacked.b_out.data() + stacked.b_out.size());
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& m : input_qcs) ins.push_back(matrix_to_json(m));
    j["M_in"] = ins;
    if (m_mid) j["M_mid"] = matrix_to_json(*m_mid);
    if (m_out) j["M_out"] = matrix_to_json(*m_out);
    return j;
}

}  // namespace nnad
