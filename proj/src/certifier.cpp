#include "nnad/certifier.hpp"

#include <mutex>
#include <ostream>

namespace nnad {

std::string to_string(Objective o) { return o == Objective::Trace ? "trace" : "logdet"; }

Objective objective_from_string(const std::string& s) {
    if (s == "trace") return Objective::Trace;
    if (s == "logdet") return Objective::LogDet;
    throw ConfigError("unknown objective '" + s + "' (expected trace or logdet)");
}

VariableLayout LmiProblem::layout() const {
    VariableLayout l;
    l.tau = static_cast<int>(input_qcs.size());
    l.hidden = stacked.dims.hidden;
    l.interval = bounds.has_value();
    l.n_pi = stacked.dims.n_pi;
    return l;
}

LmiProblem make_lmi_problem(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                            const CertifierOptions& opts, bool single_input) {
    if (inputs.empty()) throw DimensionError("make_lmi_problem: no input ellipsoids");
    std::vector<int> sizes;
    for (const auto& e : inputs) sizes.push_back(e.dim());
    LmiProblem p;
    p.stacked = stack(net, sizes);
    if (single_input) {
        p.input_qcs.push_back(single_input_qc(inputs, p.stacked));
    } else {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            p.input_qcs.push_back(input_qc(p.stacked.input_selectors[i], inputs[i]));
        }
    }
    if (opts.interval_tightening) p.bounds = preactivation_bounds(net, inputs);
    p.objective = opts.objective;
    if (!(opts.u_floor > 0.0 && opts.u_cap > opts.u_floor)) {
        throw ConfigError("certifier: need 0 < u_floor < u_cap");
    }
    p.u_floor = opts.u_floor;
    p.u_cap = opts.u_cap;
    return p;
}

namespace {

// Pairs (a, b), a <= b, in the order U variables are laid out.
std::vector<std::pair<int, int>> u_pairs(int n_pi) {
    std::vector<std::pair<int, int>> out;
    for (int a = 0; a < n_pi; ++a)
        for (int b = a; b < n_pi; ++b) out.emplace_back(a, b);
    return out;
}

}  // namespace

DecisionValues unpack(const LmiProblem& problem, const Vec& x) {
    const VariableLayout l = problem.layout();
    detail::require_dim(x.size() == l.total(), "unpack: vector length differs from variable layout");
    DecisionValues v;
    v.tau = x.head(l.tau);
    v.multipliers.lambda = x.segment(l.lambda_offset(), l.hidden);
    v.multipliers.nu = x.segment(l.nu_offset(), l.hidden);
    v.multipliers.eta = x.segment(l.eta_offset(), l.hidden);
    if (l.interval) v.multipliers.rho = x.segment(l.rho_offset(), l.hidden);
    v.U = Mat::Zero(l.n_pi, l.n_pi);
    int k = l.u_offset();
    for (const auto& [a, b] : u_pairs(l.n_pi)) {
        v.U(a, b) = v.U(b, a) = x(k++);
    }
    v.V = x.segment(l.v_offset(), l.n_pi);
    return v;
}

Vec pack(const LmiProblem& problem, const DecisionValues& values) {
    const VariableLayout l = problem.layout();
    detail::require_dim(values.tau.size() == l.tau, "pack: tau size mismatch");
    detail::require_dim(values.U.rows() == l.n_pi && values.V.size() == l.n_pi, "pack: U/V size mismatch");
    Vec x(l.total());
    x.head(l.tau) = values.tau;
    x.segment(l.lambda_offset(), l.hidden) = values.multipliers.lambda;
    x.segment(l.nu_offset(), l.hidden) = values.multipliers.nu;
    x.segment(l.eta_offset(), l.hidden) = values.multipliers.eta;
    if (l.interval) x.segment(l.rho_offset(), l.hidden) = values.multipliers.rho;
    int k = l.u_offset();
    for (const auto& [a, b] : u_pairs(l.n_pi)) x(k++) = 0.5 * (values.U(a, b) + values.U(b, a));
    x.segment(l.v_offset(), l.n_pi) = values.V;
    return x;
}

Mat assemble(const LmiProblem& problem, const DecisionValues& values) {
    const StackedForm& s = problem.stacked;
    const int n = s.lifted_dim();
    const int np = s.dims.n_pi;
    detail::require_dim(values.tau.size() == static_cast<int>(problem.input_qcs.size()),
                        "assemble: one tau per input QC required");
    detail::require_dim(values.U.rows() == np && values.U.cols() == np && values.V.size() == np,
                        "assemble: U/V size mismatch");

    Mat x = activation_qc(s, values.multipliers, problem.bounds_ptr());
    for (std::size_t i = 0; i < problem.input_qcs.size(); ++i) {
        detail::require_dim(problem.input_qcs[i].rows() == n, "assemble: input QC dimension mismatch");
        x += values.tau(static_cast<Eigen::Index>(i)) * problem.input_qcs[i];
    }
    x(n - 1, n - 1) -= 1.0;

    const int n_last = s.dims.layer_widths.back();
    Mat f = Mat::Zero(np, n);
    f.block(0, s.dims.n_z - n_last, np, n_last) = values.U * s.w_out;
    f.col(n - 1) = values.U * s.b_out + values.V;

    Mat m(n + np, n + np);
    m.topLeftCorner(n, n) = x;
    m.topRightCorner(n, np) = f.transpose();
    m.bottomLeftCorner(np, n) = f;
    m.bottomRightCorner(np, np) = -Mat::Identity(np, np);
    return m;
}

sdp::Problem to_backend_problem(const LmiProblem& problem) {
    const StackedForm& s = problem.stacked;
    const VariableLayout l = problem.layout();
    const int nv = l.total();
    const int n = s.lifted_dim();
    const int np = s.dims.n_pi;
    const int d = s.dims.hidden;
    const int n0 = s.dims.n_gamma;
    const int one = n - 1;
    const PreactivationBounds* bounds = problem.bounds_ptr();

    sdp::Problem out;
    out.num_vars = nv;

    // Block 0: -M >= 0.
    sdp::AffineBlock main(n + np, nv);
    main.constant(one, one) = 1.0;
    main.constant.bottomRightCorner(np, np) = Mat::Identity(np, np);

    for (int i = 0; i < l.tau; ++i) {
        const Mat& qc = problem.input_qcs[i];
        for (int r = 0; r < n; ++r) {
            for (int c = r; c < n; ++c) {
                if (qc(r, c) == 0.0) continue;
                main.add_term(i, main.unit(r), main.unit(c), -(r == c ? 1.0 : 2.0) * qc(r, c));
            }
        }
    }

    const int e = main.unit(one);
    for (int j = 0; j < d; ++j) {
        Vec cx = Vec::Zero(n + np);
        cx.head(n - 1) = s.A.row(j).transpose();
        cx(one) = s.b(j);
        const int ix = main.add_vector(cx);
        const int iy = main.unit(n0 + j);
        main.add_term(l.lambda_offset() + j, ix, iy, -2.0);
        main.add_term(l.lambda_offset() + j, iy, iy, 2.0);
        main.add_term(l.nu_offset() + j, iy, e, -2.0);
        main.add_term(l.nu_offset() + j, ix, e, 2.0);
        main.add_term(l.eta_offset() + j, iy, e, -2.0);
        if (bounds) {
            const double lo = bounds->lower(j);
            const double up = bounds->upper(j);
            main.add_term(l.rho_offset() + j, ix, ix, 1.0);
            main.add_term(l.rho_offset() + j, ix, e, -(lo + up));
            main.add_term(l.rho_offset() + j, e, e, lo * up);
        }
    }

    const int n_last = s.dims.layer_widths.back();
    std::vector<int> w_idx(np);
    std::vector<int> r_idx(np);
    for (int a = 0; a < np; ++a) {
        Vec w = Vec::Zero(n + np);
        w.segment(s.dims.n_z - n_last, n_last) = s.w_out.row(a).transpose();
        w(one) = s.b_out(a);
        w_idx[a] = main.add_vector(w);
        r_idx[a] = main.unit(n + a);
    }
    const auto pairs = u_pairs(np);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto [a, b] = pairs[k];
        const int var = l.u_offset() + static_cast<int>(k);
        main.add_term(var, w_idx[a], r_idx[b], -2.0);
        if (a != b) main.add_term(var, w_idx[b], r_idx[a], -2.0);
    }
    for (int c = 0; c < np; ++c) main.add_term(l.v_offset() + c, e, r_idx[c], -2.0);
    out.constraints.push_back(std::move(main));
    out.phase1_blocks.push_back(0);

    // U - floor I >= 0 and cap I - U >= 0; U itself for the logdet objective.
    auto u_block = [&](double sign, double shift) {
        sdp::AffineBlock b(np, nv);
        b.constant = shift * Mat::Identity(np, np);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto [a, c] = pairs[k];
            b.add_term(l.u_offset() + static_cast<int>(k), b.unit(a), b.unit(c), sign * (a == c ? 1.0 : 2.0));
        }
        return b;
    };
    out.constraints.push_back(u_block(1.0, -problem.u_floor));
    out.constraints.push_back(u_block(-1.0, problem.u_cap));

    out.linear_objective = Vec::Zero(nv);
    if (problem.objective == Objective::Trace) {
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            if (pairs[k].first == pairs[k].second) out.linear_objective(l.u_offset() + static_cast<int>(k)) = -1.0;
        }
    } else {
        out.objective_logdet.push_back(u_block(1.0, 0.0));
    }

    for (int i = 0; i < l.tau; ++i) out.nonnegative.push_back(i);
    for (int j = 0; j < d; ++j) {
        if (!(bounds && bounds->stably_active(j))) out.nonnegative.push_back(l.nu_offset() + j);
        if (!(bounds && bounds->stably_inactive(j))) out.nonnegative.push_back(l.eta_offset() + j);
        if (bounds) out.nonnegative.push_back(l.rho_offset() + j);
    }

    DecisionValues start;
    start.tau = Vec::Constant(l.tau, 0.5 / l.tau);
    start.multipliers = ReluQcMultipliers::zeros(d, bounds != nullptr);
    start.multipliers.lambda.setConstant(0.1);
    start.multipliers.nu.setConstant(0.1);
    start.multipliers.eta.setConstant(0.1);
    if (bounds) start.multipliers.rho.setConstant(0.1);
    const double u0 = std::min(std::max(10.0 * problem.u_floor, 1e-3), 0.5 * problem.u_cap);
    start.U = u0 * Mat::Identity(np, np);
    start.V = Vec::Zero(np);
    out.start = pack(problem, start);
    return out;
}

void write_lmi_triplets(const sdp::Problem& problem, std::ostream& out) {
    out << "# nnad LMI: F_b(x) = F_b0 + sum_i x_i F_bi >= 0 for each block b\n";
    out << "# lines: block var row col value (upper triangle, 1-based var, var 0 = constant)\n";
    out << "vars " << problem.num_vars << "\n";
    out << "blocks " << problem.constraints.size();
    for (const auto& b : problem.constraints) out << ' ' << b.dim;
    out << "\n";
    out << "objective";
    for (int i = 0; i < problem.linear_objective.size(); ++i) out << ' ' << problem.linear_objective(i);
    out << "\n";
    out << "logdet_objective_blocks " << problem.objective_logdet.size() << "\n";
    out << "nonnegative";
    for (int i : problem.nonnegative) out << ' ' << (i + 1);
    out << "\n";
    out.precision(17);
    for (std::size_t k = 0; k < problem.constraints.size(); ++k) {
        const auto& b = problem.constraints[k];
        for (int var = 0; var <= problem.num_vars; ++var) {
            const Mat m = var == 0 ? b.constant : b.coefficient(var - 1);
            for (int r = 0; r < b.dim; ++r)
                for (int c = r; c < b.dim; ++c)
                    if (m(r, c) != 0.0) out << (k + 1) << ' ' << var << ' ' << (r + 1) << ' ' << (c + 1) << ' ' << m(r, c) << "\n";
        }
    }
}

namespace {

std::mutex& serial_backend_mutex() {
    static std::mutex m;
    return m;
}

std::shared_ptr<const sdp::Backend> resolve_backend(const CertifierOptions& opts) {
    auto backend = opts.backend ? opts.backend : sdp::backend_from_environment();
    if (opts.objective == Objective::LogDet && !backend->supports_logdet()) {
        throw ConfigError("backend '" + backend->name() + "' does not support the logdet objective");
    }
    return backend;
}

sdp::Result run_backend(const sdp::Backend& backend, const sdp::Problem& p) {
    if (backend.thread_safe()) return backend.solve(p);
    const std::lock_guard<std::mutex> lock(serial_backend_mutex());
    return backend.solve(p);
}

CertifiedBound verify(const LmiProblem& problem, const DecisionValues& values, const sdp::Result& res,
                      const CertifierOptions& opts) {
    CertifiedBound out;
    out.values = values;
    out.solver_status = res.status;
    out.message = res.message;
    out.gap_bound = res.gap_bound;
    out.newton_steps = res.newton_steps;
    if (res.x.size() == 0) return out;

    const Mat m = assemble(problem, values);
    out.max_eigenvalue = Eigen::SelfAdjointEigenSolver<Mat>(m, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();

    const PreactivationBounds* bounds = problem.bounds_ptr();
    double slack = values.tau.size() ? values.tau.minCoeff() : 0.0;
    for (int j = 0; j < values.multipliers.nu.size(); ++j) {
        if (!(bounds && bounds->stably_active(j))) slack = std::min(slack, values.multipliers.nu(j));
        if (!(bounds && bounds->stably_inactive(j))) slack = std::min(slack, values.multipliers.eta(j));
        if (bounds) slack = std::min(slack, values.multipliers.rho(j));
    }
    out.min_sign_slack = slack;

    const Eigen::SelfAdjointEigenSolver<Mat> ueig(values.U, Eigen::EigenvaluesOnly);
    const double u_min = ueig.eigenvalues().minCoeff();
    out.objective = problem.objective == Objective::Trace ? -values.U.trace()
                                                          : -ueig.eigenvalues().array().log().sum();

    const bool feasible = out.max_eigenvalue <= opts.feasibility_tolerance &&
                          slack >= -opts.sign_tolerance && u_min >= problem.u_floor * (1.0 - 1e-9);
    if (res.status == sdp::Status::Infeasible || !feasible) {
        if (!feasible && out.message.empty()) out.message = "certificate failed independent feasibility check";
        return out;
    }
    try {
        out.ellipsoid = output_ellipsoid(values.U, values.V);
        out.log_volume = out.ellipsoid->log_volume();
        out.accepted = true;
    } catch (const Error& e) {
        out.message = e.what();
    }
    return out;
}

CertifiedBound certify_impl(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                            const CertifierOptions& opts, bool single) {
    const auto backend = resolve_backend(opts);
    const LmiProblem original = make_lmi_problem(net, inputs, opts, single);
    if (!opts.recenter) {
        const sdp::Result res = run_backend(*backend, to_backend_problem(original));
        return verify(original, res.x.size() ? unpack(original, res.x) : DecisionValues{}, res, opts);
    }

    // Affine change of variables: inputs gamma_i - mu_i and output pi - pi(mu).
    Vec mu(net.input_dim());
    int off = 0;
    std::vector<Ellipsoid> centered;
    for (const auto& e : inputs) {
        mu.segment(off, e.dim()) = e.center();
        off += e.dim();
        centered.emplace_back(Vec::Zero(e.dim()), e.shape());
    }
    const Vec nominal = net.forward(mu);
    std::vector<Mat> w = net.weights();
    std::vector<Vec> b = net.biases();
    b.front() += w.front() * mu;
    b.back() -= nominal;
    const ReluNetwork shifted(std::move(w), std::move(b));

    LmiProblem shifted_problem = make_lmi_problem(shifted, centered, opts, single);
    shifted_problem.bounds = original.bounds;  // pre-activations are unchanged by the shift
    const sdp::Result res = run_backend(*backend, to_backend_problem(shifted_problem));
    if (res.x.size() == 0) return verify(original, {}, res, opts);
    DecisionValues values = unpack(shifted_problem, res.x);
    values.V -= values.U * nominal;
    return verify(original, values, res, opts);
}

}  // namespace

CertifiedBound solve(const LmiProblem& problem, const CertifierOptions& opts) {
    const auto backend = resolve_backend(opts);
    const sdp::Result res = run_backend(*backend, to_backend_problem(problem));
    return verify(problem, res.x.size() ? unpack(problem, res.x) : DecisionValues{}, res, opts);
}

CertifiedBound certify(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                       const CertifierOptions& opts) {
    return certify_impl(net, inputs, opts, false);
}

CertifiedBound certify_single(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs,
                              const CertifierOptions& opts) {
    return certify_impl(net, inputs, opts, true);
}

Mat monte_carlo_output_set(const ReluNetwork& net, const std::vector<Ellipsoid>& inputs, int n_samples,
                           std::mt19937_64& rng) {
    if (n_samples < 1) throw DomainError("monte_carlo_output_set: need at least one sample");
    int dim = 0;
    for (const auto& e : inputs) dim += e.dim();
    detail::require_dim(dim == net.input_dim(), "monte_carlo_output_set: inputs do not match network");
    Mat out(n_samples, net.output_dim());
    Vec x(dim);
    for (int s = 0; s < n_samples; ++s) {
        int off = 0;
        for (const auto& e : inputs) {
            x.segment(off, e.dim()) = sample(e, SampleMode::Interior, rng);
            off += e.dim();
        }
        out.row(s) = net.forward(x).transpose();
    }
    return out;
}

nlohmann::json to_json(const CertifiedBound& bound) {
    nlohmann::json j;
    j["accepted"] = bound.accepted;
    j["status"] = sdp::to_string(bound.solver_status);
    j["message"] = bound.message;
    j["objective"] = bound.objective;
    j["log_volume"] = bound.log_volume;
    j["max_eigenvalue"] = bound.max_eigenvalue;
    j["min_sign_slack"] = bound.min_sign_slack;
    j["gap_bound"] = bound.gap_bound;
    j["newton_steps"] = bound.newton_steps;
    if (bound.ellipsoid) j["ellipsoid"] = to_json(*bound.ellipsoid);
    if (bound.values.U.size()) {
        j["U"] = matrix_to_json(bound.values.U);
        j["V"] = std::vector<double>(bound.values.V.data(), bound.values.V.data() + bound.values.V.size());
        j["tau"] = std::vector<double>(bound.values.tau.data(), bound.values.tau.data() + bound.values.tau.size());
    }
    return j;
}

}  // namespace nnad
