// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <CLI11.hpp>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "nnad/confidence.hpp"
#include "nnad/experiment.hpp"
#include "nnad/io.hpp"
#include "qc_support.hpp"

using namespace nnad;
using namespace testing_support;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
};

std::vector<std::pair<int, Outcome>> results;

Outcome& criterion(int id) {
    results.emplace_back(id, Outcome{});
    return results.back().second;
}

void require(Outcome& o, bool ok, const std::string& what) {
    if (!ok) {
        o.pass = false;
        o.detail << " [failed: " << what << "]";
    }
}

ExperimentConfig preset(const std::string& name, const fs::path& out, std::uint64_t seed) {
    ExperimentConfig c = load_config(fs::path(NNAD_PRESETS) / (name + ".json"));
    c.seed = seed;
    c.output_dir = out;
    return c;
}

double rate(const json& detect_summary, const std::string& scenario) {
    for (const auto& s : detect_summary.at("scenarios"))
        if (s.at("name") == scenario) return s.at("summary").at("alarm_rate").get<double>();
    throw std::runtime_error("no scenario " + scenario);
}

std::int64_t count(const json& detect_summary, const std::string& scenario, const char* field) {
    for (const auto& s : detect_summary.at("scenarios"))
        if (s.at("name") == scenario) return s.at("summary").at(field).get<std::int64_t>();
    throw std::runtime_error("no scenario " + scenario);
}

DetectorConfig detector_config(const ExperimentConfig& cfg) {
    DetectorConfig d;
    d.N = cfg.N;
    d.p_bar = cfg.p_bar;
    d.sigma_v = cfg.plant.sigma_v();
    d.certifier = cfg.certifier;
    return d;
}

struct CertificateAudit {
    int accepted = 0;
    double worst_eig = -1e300;
    double worst_slack = 1e300;

    void add(const ReluNetwork& net, const std::vector<Ellipsoid>& in, const CertifierOptions& opts, bool single,
             const CertifiedBound& b) {
        if (!b.accepted) return;
        ++accepted;
        // recompute from the decision values, not the backend's report
        const Mat m = assemble(make_lmi_problem(net, in, opts, single), b.values);
        worst_eig = std::max(worst_eig, Eigen::SelfAdjointEigenSolver<Mat>(m, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff());
        double slack = b.values.tau.size() ? b.values.tau.minCoeff() : 1e300;
        const auto& mu = b.values.multipliers;
        if (mu.nu.size()) slack = std::min(slack, mu.nu.minCoeff());
        if (mu.eta.size()) slack = std::min(slack, mu.eta.minCoeff());
        if (mu.rho.size()) slack = std::min(slack, mu.rho.minCoeff());
        worst_slack = std::min(worst_slack, slack);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance run"};
    std::string work = "acceptance_runs";
    int beam_seeds = 5;
    app.add_option("--work", work, "scratch directory for the runs");
    app.add_option("--beam-seeds", beam_seeds, "number of beam seeds");
    CLI11_PARSE(app, argc, argv);
    const fs::path root(work);
    fs::create_directories(root);
    std::cout << std::setprecision(6);
    CertificateAudit audit;

    // Experiment runs shared by several criteria.
    std::vector<ExperimentConfig> beams;
    std::vector<json> beam_detect;
    for (int s = 1; s <= beam_seeds; ++s) {
        ExperimentConfig c = preset("beam", root / ("beam_seed" + std::to_string(s)), s);
        if (s > 1) c.scenarios.resize(1);  // faults are evaluated with the seed-1 weights
        std::cerr << "beam seed " << s << "\n";
        cmd_simulate(c);
        cmd_train(c, false);
        beam_detect.push_back(cmd_detect(c).summary);
        beams.push_back(c);
    }
    const ExperimentConfig tanks = preset("tanks", root / "tanks", 1);
    std::cerr << "tanks\n";
    cmd_simulate(tanks);
    cmd_train(tanks, false);
    const json tank_detect = cmd_detect(tanks).summary;

    // 1: Monte Carlo soundness on detector steps of both trained systems.
    {
        Outcome& o = criterion(1);
        for (const ExperimentConfig* c : std::vector<const ExperimentConfig*>{&beams.front(), &tanks}) {
            const ReluNetwork net = load_weights(c->output_dir / files::kWeights);
            const Detector det(net, detector_config(*c));
            const Trajectory t = read_trajectory_csv(c->output_dir / files::trajectory(c->scenarios.front().name));
            std::mt19937_64 rng(derive_seed(c->seed, 17));
            const int last = static_cast<int>(t.measurements.rows()) - 2;
            int certified = 0;
            double worst = 0.0;
            for (int i = 0; i < 50; ++i) {
                const int k = c->N + static_cast<int>(static_cast<long long>(i) * (last - c->N) / 49);
                const auto in = det.input_ellipsoids(t.measurements, k);
                const CertifiedBound b = certify(net, in, c->certifier);
                audit.add(net, in, c->certifier, false, b);
                if (!b.accepted) continue;
                ++certified;
                const Mat cloud = monte_carlo_output_set(net, in, 10000, rng);
                for (int r = 0; r < cloud.rows(); ++r) worst = std::max(worst, b.ellipsoid->margin(cloud.row(r).transpose()));
            }
            o.detail << " " << to_string(c->plant.kind) << ": " << certified << "/50 certified, worst margin " << worst
                     << ";";
            require(o, certified == 50, "all 50 steps certified");
            require(o, worst <= 1.0 + 1e-7, "every sample inside");
        }
    }

    // 2: normal-operation rates under the false-alarm bound.
    {
        Outcome& o = criterion(2);
        const double beam_bound = false_alarm_bound(0.95, 1), tank_bound = false_alarm_bound(0.95, 3);
        o.detail << " beam bound " << beam_bound << ", rates";
        for (std::size_t s = 0; s < beams.size(); ++s) {
            const double r = rate(beam_detect[s], "normal");
            const auto n = count(beam_detect[s], "normal", "steps_evaluated");
            o.detail << " " << r << " (" << n << " steps)";
            require(o, r <= beam_bound, "beam seed " + std::to_string(s + 1) + " rate");
            require(o, n >= 2000, "at least 2000 evaluated beam steps");
        }
        const double tr = rate(tank_detect, "normal");
        const auto tn = count(tank_detect, "normal", "steps_evaluated");
        o.detail << "; tank bound " << tank_bound << ", rate " << tr << " (" << tn << " steps)";
        require(o, tr <= tank_bound, "tank rate");
        require(o, tn >= 2000, "at least 2000 evaluated tank steps");
        require(o, static_cast<int>(beams.size()) >= 5, "five beam seeds");
    }

    // 3: fault rates exceed the same-weights normal rate.
    {
        Outcome& o = criterion(3);
        const double bn = rate(beam_detect.front(), "normal");
        for (const char* f : {"vibration", "sensor_bias"}) {
            const double r = rate(beam_detect.front(), f);
            o.detail << " " << f << " " << r << " vs " << bn << ";";
            require(o, r > bn, f);
        }
        const double r = rate(tank_detect, "blockage"), tn = rate(tank_detect, "normal");
        o.detail << " blockage " << r << " vs " << tn << " (reference 0.2717, 0.2535, 0.581)";
        require(o, r > tn, "blockage");
    }

    // 4: multi-ellipsoid bound never looser than the single-ellipsoid one.
    {
        Outcome& o = criterion(4);
        int solved = 0, q1 = 0;
        double worst = -1e300, worst_q1 = 0.0, total = 0.0;
        std::vector<const ExperimentConfig*> runs;
        for (const auto& b : beams) runs.push_back(&b);
        runs.push_back(&tanks);
        for (const ExperimentConfig* c : runs) {
            for (const auto& r : cmd_compare_single_multi(*c)) {
                if (!r.solved) continue;
                ++solved;
                worst = std::max(worst, r.multi - r.single);
                total += r.multi - r.single;
            }
        }
        CertifierOptions opts;
        opts.objective = Objective::LogDet;
        std::mt19937_64 rng(404);
        for (int i = 0; i < 20; ++i) {
            const int q = 1 + i % 4;
            const ReluNetwork net = random_network({2 * q, 8, 4, 2}, rng, 1.5, 0.5);
            std::vector<Ellipsoid> in;
            for (int j = 0; j < q; ++j) in.emplace_back(random_vec(2, rng, 2.0), random_spd(2, rng, 0.01, 0.5));
            const CertifiedBound m = certify(net, in, opts), s = certify_single(net, in, opts);
            audit.add(net, in, opts, false, m);
            audit.add(net, in, opts, true, s);
            if (!m.accepted || !s.accepted) continue;
            ++solved;
            worst = std::max(worst, m.log_volume - s.log_volume);
            total += m.log_volume - s.log_volume;
            if (q == 1) {
                ++q1;
                worst_q1 = std::max(worst_q1, std::abs(m.log_volume - s.log_volume));
            }
        }
        o.detail << " " << solved << " solved, max(multi - single) " << worst << ", mean " << total / std::max(solved, 1)
                 << ", " << q1
                 << " q=1 instances, max |difference| " << worst_q1;
        require(o, solved >= 50, "at least 50 solved instances");
        require(o, worst <= 1e-6, "dominance");
        require(o, worst_q1 <= 1e-6, "q = 1 agreement");
    }

    // 5: confidence scale and scaled noise covariance.
    {
        Outcome& o = criterion(5);
        const ConfidenceSpec spec = make_confidence_spec(0.95, beams.front().plant.sigma_v());
        Mat expected(2, 2);
        expected << 0.1282, 0.0671, 0.0671, 0.1300;
        const double scale = confidence_scale(2, 0.95);
        const double err = (spec.sigma_v_bar - expected).cwiseAbs().maxCoeff();
        o.detail << " scale " << std::setprecision(10) << scale << ", max entry error " << err << std::setprecision(6);
        require(o, std::abs(scale - 5.9915) <= 1e-3, "scale");
        require(o, err <= 5e-4, "scaled covariance");
    }

    // 6: Minkowski membership against the brute-force oracle.
    {
        Outcome& o = criterion(6);
        std::mt19937_64 rng(606);
        int disagreements = 0, banded = 0;
        for (int i = 0; i < 1000; ++i) {
            const auto inst = random_minkowski_instance(rng);
            const double oracle = minkowski_margin_oracle(inst.e1, inst.e2, inst.point);
            if (std::abs(oracle - 1.0) < 1e-6) {
                ++banded;
                continue;
            }
            if (minkowski_contains(inst.e1, inst.e2, inst.point).inside != (oracle <= 1.0)) ++disagreements;
        }
        o.detail << " 1000 instances, " << banded << " in the boundary band, " << disagreements << " disagreements";
        require(o, disagreements == 0, "no disagreements");
    }

    // 7: QC validity on random triples and Schur equivalence.
    {
        Outcome& o = criterion(7);
        std::mt19937_64 rng(707);
        double worst_in = 1e300, worst_mid = 1e300;
        for (int trial = 0; trial < 1000; ++trial) {
            const RandomCase c = random_case(rng);
            const StackedForm s = stack(c.net, c.sizes);
            const Vec z = stacked_state(c.net, sample_input(c.inputs, rng));
            for (int i = 0; i < s.dims.q; ++i) worst_in = std::min(worst_in, form(input_qc(s.input_selectors[i], c.inputs[i]), z));
            worst_mid = std::min(worst_mid, form(activation_qc(s, random_multipliers(s.dims.hidden, nullptr, rng)), z));
        }
        int agree = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const RandomCase c = random_case(rng);
            const LmiProblem p = make_lmi_problem(c.net, c.inputs, {}, false);
            DecisionValues dv;
            std::uniform_real_distribution<double> u(0.0, 2.0);
            dv.tau = Vec(p.input_qcs.size());
            for (int i = 0; i < dv.tau.size(); ++i) dv.tau(i) = u(rng);
            dv.multipliers = random_multipliers(p.stacked.dims.hidden, nullptr, rng);
            dv.U = random_spd(2, rng, 0.05, 3.0);
            dv.V = random_vec(2, rng, 1.0);
            Mat x = activation_qc(p.stacked, dv.multipliers) + output_qc(p.stacked, dv.U, dv.V);
            for (int i = 0; i < dv.tau.size(); ++i) x += dv.tau(i) * p.input_qcs[i];
            if (positive_eigenvalues(assemble(p, dv)) == positive_eigenvalues(x)) ++agree;
        }
        o.detail << " min input form " << worst_in << ", min activation form " << worst_mid << ", Schur agreement "
                 << agree << "/50";
        require(o, worst_in >= -1e-9, "input QC");
        require(o, worst_mid >= -1e-9, "activation QC");
        require(o, agree == 50, "Schur sign agreement");
    }

    // 8: backprop against central differences.
    {
        Outcome& o = criterion(8);
        std::mt19937_64 rng(808);
        const std::vector<std::vector<int>> archs = {{2, 3, 1}, {4, 5, 2}, {3, 4, 3, 2}, {4, 6, 3, 2}};
        int nets = 0;
        double worst = 0.0;
        while (nets < 20) {
            const auto& arch = archs[nets % archs.size()];
            const ReluNetwork net = random_network(arch, rng, 1.5, 0.5);
            const Mat x = random_mat(6, arch.front(), rng, 1.0);
            const Mat y = random_mat(6, arch.back(), rng, 1.0);
            double closest = 1e300;
            for (int r = 0; r < x.rows(); ++r) {
                Vec z = x.row(r).transpose();
                for (int t = 0; t < net.hidden_layers(); ++t) {
                    const Vec pre = net.weights()[t] * z + net.biases()[t];
                    closest = std::min(closest, pre.cwiseAbs().minCoeff());
                    z = pre.cwiseMax(0.0);
                }
            }
            if (closest < 1e-3) continue;
            ++nets;
            const Gradients g = loss_gradient(net, x, y);
            const double h = 1e-6;
            double num = 0.0, den = 0.0;
            auto loss = [&](int layer, bool bias, int i, int j, double d) {
                std::vector<Mat> w = net.weights();
                std::vector<Vec> b = net.biases();
                if (bias) b[layer](i) += d;
                else w[layer](i, j) += d;
                return mean_squared_error(ReluNetwork(w, b), x, y);
            };
            for (int t = 0; t <= net.hidden_layers(); ++t) {
                for (int i = 0; i < net.weights()[t].rows(); ++i) {
                    for (int j = 0; j < net.weights()[t].cols(); ++j) {
                        const double fd = (loss(t, false, i, j, h) - loss(t, false, i, j, -h)) / (2 * h);
                        num += std::pow(fd - g.weights[t](i, j), 2);
                        den += fd * fd;
                    }
                    const double fd = (loss(t, true, i, 0, h) - loss(t, true, i, 0, -h)) / (2 * h);
                    num += std::pow(fd - g.biases[t](i), 2);
                    den += fd * fd;
                }
            }
            worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
        }
        o.detail << " 20 networks, worst relative error " << worst;
        require(o, worst < 1e-4, "relative error");
    }

    // 10: noisy- vs ideal-trained bounds (run before 9 so its certificates are audited too).
    Outcome o10;
    {
        ExperimentConfig c = beams.front();
        const TrainingNoiseResult r = cmd_compare_training_noise(c);
        const io::CsvTable pts = io::read_csv(c.output_dir / files::kTrainingNoiseEllipses);
        o10.detail << " " << r.solved << "/" << r.rows.size() << " paired volumes, noisy-trained bound smaller in "
                   << 100.0 * r.fraction_noisy_smaller << "% of steps, " << pts.rows.size() << " ellipse points";
        require(o10, r.solved > 0 && !pts.rows.empty(), "paired volumes emitted");
        const ReluNetwork noisy = load_weights(c.output_dir / files::kWeights);
        const ReluNetwork ideal = load_weights(c.output_dir / files::kWeightsIdeal);
        const Detector det(noisy, detector_config(c));
        const Trajectory t = read_trajectory_csv(c.output_dir / files::trajectory("normal"));
        for (const auto& row : r.rows) {
            const auto in = det.input_ellipsoids(t.measurements, row.k);
            audit.add(noisy, in, c.certifier, false, certify(noisy, in, c.certifier));
            audit.add(ideal, in, c.certifier, false, certify(ideal, in, c.certifier));
        }
    }

    // 9: every accepted certificate above re-verified from its decision values.
    {
        Outcome& o = criterion(9);
        o.detail << " " << audit.accepted << " certificates, max eigenvalue " << audit.worst_eig
                 << ", min sign-constrained value " << audit.worst_slack;
        require(o, audit.accepted > 0, "certificates audited");
        require(o, audit.worst_eig <= 1e-7, "eigenvalue");
        require(o, audit.worst_slack >= -1e-9, "sign constraints");
    }
    results.emplace_back(10, std::move(o10));

    std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    bool all = true;
    for (const auto& [id, o] : results) {
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ":" << o.detail.str() << "\n";
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
