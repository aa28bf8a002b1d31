// nnad: simulate, train, certify and detect from one JSON experiment config.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage,
// 3 detection finished but more than 10% of some scenario's steps were indeterminate.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "nnad/experiment.hpp"
#include "nnad/io.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigInvalid = 2;
constexpr int kIndeterminateWarning = 3;

nnad::ExperimentConfig load(const std::string& path, const std::string& out) {
    nnad::ExperimentConfig cfg = nnad::load_config(path);
    if (!out.empty()) cfg.output_dir = out;
    return cfg;
}

int detect(const nnad::ExperimentConfig& cfg) {
    const nnad::DetectOutcome res = nnad::cmd_detect(cfg);
    for (const auto& s : res.summary["scenarios"]) {
        std::cout << s["name"].get<std::string>() << ": alarm rate " << s["summary"]["alarm_rate"].get<double>()
                  << " (" << s["summary"]["alarms"] << "/" << s["summary"]["steps_evaluated"] << ")\n";
    }
    std::cout << "false-alarm bound " << res.summary["false_alarm_bound"].get<double>() << "\n";
    if (res.indeterminate_warning) {
        std::cerr << "warning: more than 10% of steps were indeterminate\n";
        return kIndeterminateWarning;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-network anomaly detector with certified prediction bounds"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("config", config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory (overrides the config)");
    };

    auto* simulate = app.add_subcommand("simulate", "simulate training data and detection trajectories");
    add_config(simulate);

    bool ideal = false;
    auto* train = app.add_subcommand("train", "train the NARX network");
    add_config(train);
    train->add_flag("--ideal-data", ideal, "train on noise-free measurements");

    auto* detect_cmd = app.add_subcommand("detect", "run the detector over every scenario");
    add_config(detect_cmd);

    auto* single_multi = app.add_subcommand("compare-single-multi", "multi- vs single-ellipsoid log-volumes");
    add_config(single_multi);

    auto* noise = app.add_subcommand("compare-training-noise", "bounds of noisy- vs ideal-trained networks");
    add_config(noise);

    std::string run_dir;
    auto* report = app.add_subcommand("report", "recompute rates from raw files and write the report");
    report->add_option("run_dir", run_dir, "output directory of a run")->required();

    auto* run = app.add_subcommand("run", "simulate, train, detect, compare and report");
    add_config(run);

    int step_k = 0;
    std::string scenario;
    std::string triplets;
    std::string qc_json;
    bool single = false;
    auto* certify_cmd = app.add_subcommand("certify", "certify one detector step and print the bound");
    add_config(certify_cmd);
    certify_cmd->add_option("--k", step_k, "window end index")->required();
    certify_cmd->add_option("--scenario", scenario, "scenario trajectory (default: first)");
    certify_cmd->add_flag("--single", single, "single stacked-input QC instead of one per ellipsoid");
    certify_cmd->add_option("--triplets", triplets, "write the LMI as sparse triplets");
    certify_cmd->add_option("--qc-json", qc_json, "write the stacked form and QC matrices as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigInvalid;
    }

    try {
        if (report->parsed()) {
            const auto r = nnad::cmd_report(run_dir);
            std::cout << nnad::io::read_file(std::filesystem::path(run_dir) / nnad::files::kSummary);
            return 0;
        }
        const nnad::ExperimentConfig cfg = load(config, out);
        if (simulate->parsed()) {
            nnad::cmd_simulate(cfg);
            std::cout << "wrote " << cfg.output_dir.string() << "\n";
        } else if (train->parsed()) {
            nnad::cmd_train(cfg, ideal);
            const auto m = nlohmann::json::parse(
                nnad::io::read_file(cfg.output_dir / nnad::files::training_metrics(ideal)));
            std::cout << "validation RMSE " << m["validation_rmse"].get<double>() << "\n";
        } else if (detect_cmd->parsed()) {
            return detect(cfg);
        } else if (single_multi->parsed()) {
            for (const auto& r : nnad::cmd_compare_single_multi(cfg)) {
                std::cout << "k=" << r.k << " multi " << r.multi << " single " << r.single << " " << r.status << "\n";
            }
        } else if (noise->parsed()) {
            const auto r = nnad::cmd_compare_training_noise(cfg);
            std::cout << "noisy-trained bound smaller in " << r.fraction_noisy_smaller * 100.0 << "% of " << r.solved
                      << " steps\n";
        } else if (run->parsed()) {
            nnad::cmd_simulate(cfg);
            if (!cfg.weights) nnad::cmd_train(cfg, false);
            const int code = detect(cfg);
            if (cfg.single_multi_steps > 0) nnad::cmd_compare_single_multi(cfg);
            if (cfg.training_noise_steps > 0) nnad::cmd_compare_training_noise(cfg);
            nnad::cmd_report(cfg.output_dir);
            std::cout << nnad::io::read_file(cfg.output_dir / nnad::files::kSummary);
            return code;
        } else if (certify_cmd->parsed()) {
            const nnad::Scenario* sc = &cfg.scenarios.front();
            for (const auto& s : cfg.scenarios)
                if (s.name == scenario) sc = &s;
            if (!scenario.empty() && sc->name != scenario) throw nnad::ConfigError("unknown scenario " + scenario);
            const nnad::Trajectory t = nnad::detection_trajectory(cfg, *sc);
            const nnad::ReluNetwork net = cfg.weights ? nnad::load_weights(*cfg.weights)
                                                      : nnad::load_weights(cfg.output_dir / nnad::files::kWeights);
            nnad::DetectorConfig dc;
            dc.N = cfg.N;
            dc.p_bar = cfg.p_bar;
            dc.sigma_v = cfg.plant.sigma_v();
            dc.certifier = cfg.certifier;
            const nnad::Detector det(net, dc);
            if (step_k < cfg.N || step_k + 1 >= t.measurements.rows()) {
                throw nnad::ConfigError("--k must lie in [N, " + std::to_string(t.measurements.rows() - 2) + "]");
            }
            const auto inputs = det.input_ellipsoids(t.measurements, step_k);
            const nnad::LmiProblem problem = nnad::make_lmi_problem(net, inputs, cfg.certifier, single);
            if (!triplets.empty()) {
                std::ofstream os(triplets);
                nnad::write_lmi_triplets(nnad::to_backend_problem(problem), os);
            }
            if (!qc_json.empty()) {
                nnad::io::write_file_atomic(qc_json, nnad::qc_bundle_json(problem.stacked, problem.input_qcs,
                                                                          std::nullopt, std::nullopt)
                                                         .dump(2));
            }
            const nnad::CertifiedBound cb = single ? nnad::certify_single(net, inputs, cfg.certifier)
                                                   : nnad::certify(net, inputs, cfg.certifier);
            nlohmann::json j = nnad::to_json(cb);
            if (cb.accepted) {
                const nnad::AlarmRecord r = det.decide(*cb.ellipsoid, t.measurements.row(step_k + 1).transpose());
                j["verdict"] = nnad::to_string(r.verdict);
                j["membership_margin"] = r.margin;
            }
            std::cout << j.dump(2) << "\n";
            return cb.accepted ? 0 : kRuntimeFailure;
        }
    } catch (const nnad::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return 0;
}
