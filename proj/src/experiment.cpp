#include "nnad/experiment.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "nnad/confidence.hpp"
#include "nnad/io.hpp"

namespace nnad {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Typed field access that reports the field path on failure.
template <typename T>
T field(const json& j, const std::string& key, const std::string& path, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + path + key + "': " + e.what());
    }
}

void only_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
    if (!j.is_object()) throw ConfigError("config field '" + path + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("config: unknown field '" + path + k + "'");
    }
}

Mat matrix_field(const json& j, const std::string& path) {
    try {
        const auto rows = j.get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw ConfigError("config field '" + path + "' is empty");
        Mat m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows.front().size()) throw ConfigError("config field '" + path + "' is ragged");
            for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
        }
        return m;
    } catch (const json::exception& e) {
        throw ConfigError("config field '" + path + "': " + e.what());
    }
}

json matrix_json(const Mat& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw IntegrityError("missing file: " + path.string());
    try {
        return json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void record_runtime(const fs::path& dir, const std::string& command, double seconds) {
    const fs::path path = dir / files::kRuntime;
    json j = json::object();
    if (fs::exists(path)) {
        try {
            j = json::parse(io::read_file(path));
        } catch (const json::exception&) {
            j = json::object();
        }
    }
    j[command] = {{"seconds", seconds},
                  {"finished_unix", std::chrono::duration_cast<std::chrono::seconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count()}};
    write_json(path, j);
}

class Timer {
public:
    Timer(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {}
    ~Timer() {
        try {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
            record_runtime(dir_, command_, s);
        } catch (...) {
        }
    }

private:
    fs::path dir_;
    std::string command_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string sha_of(const fs::path& p) { return io::sha256_hex(io::read_file(p)); }

ReluNetwork network_for(const ExperimentConfig& cfg, bool ideal) {
    if (!ideal && cfg.weights) return load_weights(*cfg.weights);
    const fs::path p = cfg.output_dir / (ideal ? files::kWeightsIdeal : files::kWeights);
    if (!fs::exists(p)) throw Error("missing " + p.string() + "; run the train command first");
    return load_weights(p);
}

DetectorConfig detector_config(const ExperimentConfig& cfg) {
    DetectorConfig d;
    d.N = cfg.N;
    d.p_bar = cfg.p_bar;
    d.sigma_v = cfg.plant.sigma_v();
    d.certifier = cfg.certifier;
    d.threads = cfg.threads;
    return d;
}

// Evenly spaced window ends in [N, T-2].
std::vector<int> spread_steps(int first, int last, int count) {
    std::vector<int> out;
    if (count <= 0 || last < first) return out;
    if (count == 1) return {first + (last - first) / 2};
    for (int i = 0; i < count; ++i) {
        const int k = first + static_cast<int>(std::llround(static_cast<double>(i) * (last - first) / (count - 1)));
        if (out.empty() || k != out.back()) out.push_back(k);
    }
    return out;
}

json summary_json(const AlarmSummary& s, const std::vector<AlarmRecord>& records) {
    json j = to_json(s);
    double vol = 0.0, res = 0.0;
    int n = 0;
    for (const auto& r : records) {
        if (r.verdict == Verdict::Indeterminate) continue;
        vol += r.log_volume;
        res += r.residual;
        ++n;
    }
    j["mean_log_volume"] = n ? vol / n : 0.0;
    j["mean_residual"] = n ? res / n : 0.0;
    return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    plant.kind == PlantKind::Beam ? plant.beam.validate() : plant.tanks.validate();
    if (N < 0) throw ConfigError("N must be >= 0");
    if (!(p_bar > 0.0 && p_bar < 1.0)) throw ConfigError("p_bar must lie in (0, 1)");
    if (arch.size() < 3) throw ConfigError("architecture needs an input, at least one hidden layer and an output");
    for (int w : arch)
        if (w <= 0) throw ConfigError("architecture widths must be positive");
    if (arch.front() != p() * (N + 1)) {
        throw ConfigError("architecture input width " + std::to_string(arch.front()) + " must equal p (N + 1) = " +
                          std::to_string(p() * (N + 1)));
    }
    if (arch.back() != p()) throw ConfigError("architecture output width must equal p = " + std::to_string(p()));
    training.validate();
    if (train_trajectories < 1) throw ConfigError("training.trajectories must be positive");
    if (train_steps < N + 2) throw ConfigError("training.steps must be at least N + 2");
    if (detect_steps < 1) throw ConfigError("detection.steps must be positive");
    if (initial_state != "random" && initial_state != "equilibrium" && initial_state != "explicit") {
        throw ConfigError("detection.initial_state must be 'random', 'equilibrium' or a state vector");
    }
    if (initial_state == "equilibrium" && plant.kind != PlantKind::Tanks) {
        throw ConfigError("detection.initial_state 'equilibrium' is defined for tanks only");
    }
    if (initial_state == "explicit" && initial_value.size() != 2) {
        throw ConfigError("detection.initial_state must have 2 entries");
    }
    if (scenarios.empty()) throw ConfigError("scenarios: at least one scenario required");
    if (scenarios.front().fault.kind != FaultKind::None) {
        throw ConfigError("scenarios: the first scenario must be normal operation (fault kind 'none')");
    }
    std::set<std::string> names;
    for (const auto& s : scenarios) {
        if (s.name.empty() || s.name.find_first_of("/\\ ,") != std::string::npos) {
            throw ConfigError("scenario names must be nonempty without spaces, commas or slashes");
        }
        if (!names.insert(s.name).second) throw ConfigError("duplicate scenario '" + s.name + "'");
        s.fault.validate();
        if (s.fault.kind == FaultKind::Vibration && plant.kind != PlantKind::Beam) {
            throw ConfigError("scenario '" + s.name + "': vibration applies to the beam only");
        }
        if (s.fault.kind == FaultKind::DrainBlockage && plant.kind != PlantKind::Tanks) {
            throw ConfigError("scenario '" + s.name + "': drain blockage applies to the tanks only");
        }
        if (s.fault.onset >= detect_steps + N + 1) {
            throw ConfigError("scenario '" + s.name + "': onset lies beyond the detection run");
        }
    }
    if (!(certifier.u_floor > 0.0 && certifier.u_cap > certifier.u_floor)) {
        throw ConfigError("certifier: need 0 < u_floor < u_cap");
    }
    if (threads < 1) throw ConfigError("detection.threads must be >= 1");
    if (single_multi_steps < 0 || training_noise_steps < 0) throw ConfigError("comparison step counts must be >= 0");
    if (ellipse_points < 3) throw ConfigError("comparisons.ellipse_points must be >= 3");
    if (weights && !fs::exists(*weights)) throw ConfigError("weights file not found: " + weights->string());
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
    only_keys(j, {"name", "system", "plant", "N", "p_bar", "architecture", "training", "detection", "scenarios",
                  "certifier", "comparisons", "seed", "output_dir", "weights", "weights_sha256"},
              "");
    ExperimentConfig c;
    c.name = field<std::string>(j, "name", "", c.name);
    c.plant.kind = plant_kind_from_string(field<std::string>(j, "system", "", "beam"));
    c.N = field<int>(j, "N", "", c.N);
    c.p_bar = field<double>(j, "p_bar", "", c.p_bar);
    c.arch = field<std::vector<int>>(j, "architecture", "", c.plant.kind == PlantKind::Beam
                                                                 ? std::vector<int>{4, 10, 2, 2}
                                                                 : std::vector<int>{8, 20, 5, 2});
    c.seed = field<std::uint64_t>(j, "seed", "", c.seed);

    if (j.contains("plant")) {
        const json& p = j["plant"];
        only_keys(p, {"sigma_v", "contraction", "beta", "init_range", "recursive_vibration", "q_in", "c_d", "a_d", "g",
                      "dt", "substeps"},
                  "plant.");
        if (p.contains("sigma_v")) {
            const Mat s = matrix_field(p["sigma_v"], "plant.sigma_v");
            c.plant.beam.sigma_v = s;
            c.plant.tanks.sigma_v = s;
        }
        if (p.contains("init_range")) {
            const auto r = field<std::vector<double>>(p, "init_range", "plant.", {});
            if (r.size() != 2) throw ConfigError("config field 'plant.init_range' needs two entries");
            c.plant.beam.init_low = c.plant.tanks.init_low = r[0];
            c.plant.beam.init_high = c.plant.tanks.init_high = r[1];
        }
        auto& b = c.plant.beam;
        b.contraction = field<double>(p, "contraction", "plant.", b.contraction);
        b.beta = field<double>(p, "beta", "plant.", b.beta);
        b.recursive_vibration = field<bool>(p, "recursive_vibration", "plant.", b.recursive_vibration);
        auto& t = c.plant.tanks;
        t.q_in = field<double>(p, "q_in", "plant.", t.q_in);
        t.c_d = field<double>(p, "c_d", "plant.", t.c_d);
        t.a_d = field<double>(p, "a_d", "plant.", t.a_d);
        t.g = field<double>(p, "g", "plant.", t.g);
        t.dt = field<double>(p, "dt", "plant.", t.dt);
        t.substeps = field<int>(p, "substeps", "plant.", t.substeps);
    }

    bool training_seed_given = false;
    if (j.contains("training")) {
        const json& t = j["training"];
        only_keys(t, {"trajectories", "steps", "epochs", "batch_size", "learning_rate", "momentum", "validation_split",
                      "lr_decay", "seed"},
                  "training.");
        c.train_trajectories = field<int>(t, "trajectories", "training.", c.train_trajectories);
        c.train_steps = field<int>(t, "steps", "training.", c.train_steps);
        auto& tc = c.training;
        tc.epochs = field<int>(t, "epochs", "training.", tc.epochs);
        tc.batch_size = field<int>(t, "batch_size", "training.", tc.batch_size);
        tc.learning_rate = field<double>(t, "learning_rate", "training.", tc.learning_rate);
        tc.momentum = field<double>(t, "momentum", "training.", tc.momentum);
        tc.validation_split = field<double>(t, "validation_split", "training.", tc.validation_split);
        tc.lr_decay = field<double>(t, "lr_decay", "training.", tc.lr_decay);
        training_seed_given = t.contains("seed");
        tc.seed = field<std::uint64_t>(t, "seed", "training.", 0);
    }
    if (!training_seed_given) c.training.seed = derive_seed(c.seed, 3);

    if (c.plant.kind == PlantKind::Tanks) c.initial_state = "equilibrium";
    if (j.contains("detection")) {
        const json& d = j["detection"];
        only_keys(d, {"steps", "initial_state", "threads"}, "detection.");
        c.detect_steps = field<int>(d, "steps", "detection.", c.detect_steps);
        c.threads = field<int>(d, "threads", "detection.", c.threads);
        if (d.contains("initial_state")) {
            if (d["initial_state"].is_string()) {
                c.initial_state = d["initial_state"].get<std::string>();
            } else {
                const auto v = field<std::vector<double>>(d, "initial_state", "detection.", {});
                c.initial_state = "explicit";
                c.initial_value = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
            }
        }
    }

    if (j.contains("scenarios")) {
        if (!j["scenarios"].is_array()) throw ConfigError("config field 'scenarios' must be an array");
        for (std::size_t i = 0; i < j["scenarios"].size(); ++i) {
            const json& s = j["scenarios"][i];
            const std::string path = "scenarios[" + std::to_string(i) + "].";
            only_keys(s, {"name", "fault", "reference_rate"}, path);
            Scenario sc;
            sc.name = field<std::string>(s, "name", path, "");
            if (s.contains("fault")) {
                only_keys(s["fault"], {"kind", "magnitude", "onset"}, path + "fault.");
                try {
                    sc.fault = fault_from_json(s["fault"]);
                } catch (const json::exception& e) {
                    throw ConfigError("config field '" + path + "fault': " + e.what());
                }
            }
            if (s.contains("reference_rate")) sc.reference_rate = field<double>(s, "reference_rate", path, 0.0);
            c.scenarios.push_back(std::move(sc));
        }
    } else {
        c.scenarios.push_back({"normal", {}, std::nullopt});
    }

    if (j.contains("certifier")) {
        const json& q = j["certifier"];
        only_keys(q, {"objective", "u_floor", "u_cap", "interval_tightening", "recenter"}, "certifier.");
        c.certifier.objective = objective_from_string(field<std::string>(q, "objective", "certifier.", "trace"));
        c.certifier.u_floor = field<double>(q, "u_floor", "certifier.", c.certifier.u_floor);
        c.certifier.u_cap = field<double>(q, "u_cap", "certifier.", c.certifier.u_cap);
        c.certifier.interval_tightening =
            field<bool>(q, "interval_tightening", "certifier.", c.certifier.interval_tightening);
        c.certifier.recenter = field<bool>(q, "recenter", "certifier.", c.certifier.recenter);
    }

    if (j.contains("comparisons")) {
        const json& q = j["comparisons"];
        only_keys(q, {"single_multi_steps", "training_noise_steps", "ellipse_points"}, "comparisons.");
        c.single_multi_steps = field<int>(q, "single_multi_steps", "comparisons.", c.single_multi_steps);
        c.training_noise_steps = field<int>(q, "training_noise_steps", "comparisons.", c.training_noise_steps);
        c.ellipse_points = field<int>(q, "ellipse_points", "comparisons.", c.ellipse_points);
    }

    c.output_dir = field<std::string>(j, "output_dir", "", "run");
    if (j.contains("weights")) {
        fs::path w = field<std::string>(j, "weights", "", "");
        c.weights = w.is_absolute() ? w : base_dir / w;
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["system"] = to_string(c.plant.kind);
    json p;
    p["sigma_v"] = matrix_json(c.plant.sigma_v());
    if (c.plant.kind == PlantKind::Beam) {
        p["contraction"] = c.plant.beam.contraction;
        p["beta"] = c.plant.beam.beta;
        p["init_range"] = {c.plant.beam.init_low, c.plant.beam.init_high};
        p["recursive_vibration"] = c.plant.beam.recursive_vibration;
    } else {
        const auto& t = c.plant.tanks;
        p["q_in"] = t.q_in;
        p["c_d"] = t.c_d;
        p["a_d"] = t.a_d;
        p["g"] = t.g;
        p["dt"] = t.dt;
        p["substeps"] = t.substeps;
        p["init_range"] = {t.init_low, t.init_high};
    }
    j["plant"] = p;
    j["N"] = c.N;
    j["p_bar"] = c.p_bar;
    j["architecture"] = c.arch;
    j["training"] = {{"trajectories", c.train_trajectories},
                     {"steps", c.train_steps},
                     {"epochs", c.training.epochs},
                     {"batch_size", c.training.batch_size},
                     {"learning_rate", c.training.learning_rate},
                     {"momentum", c.training.momentum},
                     {"validation_split", c.training.validation_split},
                     {"lr_decay", c.training.lr_decay},
                     {"seed", c.training.seed}};
    json d = {{"steps", c.detect_steps}, {"threads", c.threads}};
    if (c.initial_state == "explicit") {
        d["initial_state"] = to_std(c.initial_value);
    } else {
        d["initial_state"] = c.initial_state;
    }
    j["detection"] = d;
    json sc = json::array();
    for (const auto& s : c.scenarios) {
        json e = {{"name", s.name}, {"fault", to_json(s.fault)}};
        if (s.reference_rate) e["reference_rate"] = *s.reference_rate;
        sc.push_back(e);
    }
    j["scenarios"] = sc;
    j["certifier"] = {{"objective", to_string(c.certifier.objective)},
                      {"u_floor", c.certifier.u_floor},
                      {"u_cap", c.certifier.u_cap},
                      {"interval_tightening", c.certifier.interval_tightening},
                      {"recenter", c.certifier.recenter}};
    j["comparisons"] = {{"single_multi_steps", c.single_multi_steps},
                        {"training_noise_steps", c.training_noise_steps},
                        {"ellipse_points", c.ellipse_points}};
    j["seed"] = c.seed;
    if (c.weights) j["weights_sha256"] = io::sha256_hex(io::read_file(*c.weights));
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) { return io::sha256_hex(to_json(cfg).dump()); }

SeedPlan seed_plan(const ExperimentConfig& cfg) {
    return {derive_seed(cfg.seed, 1), derive_seed(cfg.seed, 2), derive_seed(cfg.seed, 4), cfg.training.seed};
}

Trajectory detection_trajectory(const ExperimentConfig& cfg, const Scenario& scenario) {
    const SeedPlan seeds = seed_plan(cfg);
    Vec x0;
    if (cfg.initial_state == "explicit") {
        x0 = cfg.initial_value;
    } else if (cfg.initial_state == "equilibrium") {
        x0 = Vec::Constant(2, cfg.plant.tanks.equilibrium());
    } else {
        std::mt19937_64 rng(seeds.detection_state);
        x0 = cfg.plant.random_initial_state(rng);
    }
    return cfg.plant.simulate(x0, cfg.detect_steps + cfg.N + 1, seeds.detection_noise, scenario.fault);
}

namespace files {
std::string trajectory(const std::string& scenario) { return "trajectory_" + scenario + ".csv"; }
std::string alarms(const std::string& scenario) { return "alarms_" + scenario + ".csv"; }
std::string training_metrics(bool ideal) { return ideal ? "training_metrics_ideal.json" : "training_metrics.json"; }
}  // namespace files

// ---------------------------------------------------------------------------
// Commands

namespace {

// Noisy windows as inputs, noise-free next outputs as labels, on fresh trajectories.
double heldout_ideal_rmse(const ExperimentConfig& cfg, const ReluNetwork& net) {
    const int n = std::max(1, cfg.train_trajectories / 10);
    const auto trajs = generate_training_set(cfg.plant, n, cfg.train_steps, derive_seed(cfg.seed, 5));
    std::vector<Mat> noisy, ideal;
    for (const auto& t : trajs) {
        noisy.push_back(t.measurements);
        ideal.push_back(t.ideal);
    }
    const Dataset in = build_dataset(noisy, cfg.N).data;
    const Dataset out = build_dataset(ideal, cfg.N).data;
    return std::sqrt(mean_squared_error(net, in.inputs, out.labels));
}

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    Timer timer(dir, "simulate");
    const SeedPlan seeds = seed_plan(cfg);

    const auto trajs = generate_training_set(cfg.plant, cfg.train_trajectories, cfg.train_steps, seeds.training_data);
    std::vector<Mat> noisy, ideal;
    for (const auto& t : trajs) {
        noisy.push_back(t.measurements);
        ideal.push_back(t.ideal);
    }
    write_dataset_csv(build_dataset(noisy, cfg.N).data, dir / files::kTrainNoisy);
    write_dataset_csv(build_dataset(ideal, cfg.N).data, dir / files::kTrainIdeal);

    json manifest;
    manifest["config"] = to_json(cfg);
    manifest["config_hash"] = config_hash(cfg);
    manifest["seeds"] = {{"master", cfg.seed},
                         {"training_data", seeds.training_data},
                         {"detection_state", seeds.detection_state},
                         {"detection_noise", seeds.detection_noise},
                         {"training", seeds.training}};
    manifest["g_convention"] = cfg.plant.kind == PlantKind::Tanks ? cfg.plant.tanks.g_convention() : "n/a";
    json filelist = json::object();
    filelist[files::kTrainNoisy] = sha_of(dir / files::kTrainNoisy);
    filelist[files::kTrainIdeal] = sha_of(dir / files::kTrainIdeal);
    for (const auto& s : cfg.scenarios) {
        const std::string name = files::trajectory(s.name);
        write_trajectory_csv(detection_trajectory(cfg, s), dir / name);
        filelist[name] = sha_of(dir / name);
    }
    manifest["files"] = filelist;
    write_json(dir / files::kManifest, manifest);
}

ReluNetwork cmd_train(const ExperimentConfig& cfg, bool ideal_data) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    const fs::path data_path = dir / (ideal_data ? files::kTrainIdeal : files::kTrainNoisy);
    if (!fs::exists(data_path)) throw Error("missing " + data_path.string() + "; run the simulate command first");
    Timer timer(dir, ideal_data ? "train_ideal" : "train");
    const Dataset data = read_dataset_csv(data_path, cfg.p());
    const TrainingResult res = train(data, cfg.arch, cfg.training);
    save_weights(res.network, dir / (ideal_data ? files::kWeightsIdeal : files::kWeights));

    const double floor = std::sqrt(cfg.plant.sigma_v().trace());
    json m;
    m["data"] = ideal_data ? "ideal" : "noisy";
    m["train_size"] = res.report.train_size;
    m["validation_size"] = res.report.validation_size;
    m["final_train_mse"] = res.report.final_train_mse;
    m["final_validation_mse"] = res.report.final_validation_mse;
    m["validation_rmse"] = std::sqrt(res.report.final_validation_mse);
    m["noise_floor_rmse"] = floor;
    m["heldout_rmse_ideal_labels"] = heldout_ideal_rmse(cfg, res.network);
    m["epoch_loss"] = res.report.train_loss;
    m["dataset_sha256"] = sha_of(data_path);
    write_json(dir / files::training_metrics(ideal_data), m);
    return res.network;
}

DetectOutcome cmd_detect(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    Timer timer(dir, "detect");
    const Detector det(network_for(cfg, false), detector_config(cfg));
    DetectOutcome out;
    json scen = json::array();
    for (const auto& s : cfg.scenarios) {
        const fs::path tpath = dir / files::trajectory(s.name);
        if (!fs::exists(tpath)) throw Error("missing " + tpath.string() + "; run the simulate command first");
        const Trajectory t = read_trajectory_csv(tpath);
        std::cerr << "detect: scenario " << s.name << " (" << t.measurements.rows() - cfg.N - 1 << " steps)\n";
        const AlarmLog log = det.run(t.measurements);
        const std::string csv = files::alarms(s.name);
        write_alarm_csv(log, dir / csv);

        json e;
        e["name"] = s.name;
        e["fault"] = to_json(s.fault);
        if (s.reference_rate) e["reference_rate"] = *s.reference_rate;
        e["alarms_file"] = csv;
        e["alarms_sha256"] = sha_of(dir / csv);
        e["trajectory_sha256"] = sha_of(tpath);
        e["summary"] = summary_json(log.summary, log.records);
        // Steps whose tested measurement y_{k+1} lies at or after the fault onset.
        std::vector<AlarmRecord> post;
        for (const auto& r : log.records)
            if (r.k + 1 >= s.fault.onset) post.push_back(r);
        e["post_onset_from_k"] = std::max(cfg.N, s.fault.onset - 1);
        e["post_onset"] = summary_json(summarize(post, cfg.p_bar, cfg.N), post);
        const auto total = log.summary.steps + log.summary.indeterminate;
        if (total > 0 && 10 * log.summary.indeterminate > total) out.indeterminate_warning = true;
        scen.push_back(e);
    }
    out.summary["config_hash"] = config_hash(cfg);
    out.summary["false_alarm_bound"] = false_alarm_bound(cfg.p_bar, cfg.N);
    out.summary["alpha"] = det.confidence().alpha;
    out.summary["sigma_v_bar"] = matrix_json(det.confidence().sigma_v_bar);
    out.summary["objective"] = to_string(cfg.certifier.objective);
    out.summary["scenarios"] = scen;
    out.summary["indeterminate_warning"] = out.indeterminate_warning;
    write_json(dir / files::kDetectSummary, out.summary);
    return out;
}

std::vector<SingleMultiRow> cmd_compare_single_multi(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    Timer timer(dir, "compare_single_multi");
    const Detector det(network_for(cfg, false), detector_config(cfg));
    const Trajectory t = read_trajectory_csv(dir / files::trajectory(cfg.scenarios.front().name));
    // Volume comparisons use the log-determinant objective, whose optimum is the
    // certified log-volume itself.
    CertifierOptions opts = cfg.certifier;
    opts.objective = Objective::LogDet;

    std::vector<SingleMultiRow> rows;
    io::CsvTable table;
    table.header = {"k", "log_volume_multi", "log_volume_single", "difference", "status"};
    for (int k : spread_steps(cfg.N, static_cast<int>(t.measurements.rows()) - 2, cfg.single_multi_steps)) {
        const auto inputs = det.input_ellipsoids(t.measurements, k);
        const CertifiedBound m = certify(det.network(), inputs, opts);
        const CertifiedBound s = certify_single(det.network(), inputs, opts);
        SingleMultiRow r;
        r.k = k;
        r.solved = m.accepted && s.accepted;
        r.multi = m.log_volume;
        r.single = s.log_volume;
        r.status = r.solved ? "ok" : "unsolved";
        rows.push_back(r);
        table.rows.push_back({std::to_string(k), io::format_double(r.multi), io::format_double(r.single),
                              io::format_double(r.multi - r.single), r.status});
    }
    io::write_file_atomic(dir / files::kSingleMulti, io::to_csv(table));
    return rows;
}

Mat ellipse_boundary(const Ellipsoid& e, int points) {
    detail::require_dim(e.dim() == 2, "ellipse_boundary: two-dimensional ellipsoid required");
    Mat out(points, 2);
    for (int i = 0; i < points; ++i) {
        const double th = 2.0 * 3.14159265358979323846 * i / points;
        const Vec u = (Vec(2) << std::cos(th), std::sin(th)).finished();
        out.row(i) = (e.center() + e.shape_factor() * u).transpose();
    }
    return out;
}

TrainingNoiseResult cmd_compare_training_noise(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path dir = cfg.output_dir;
    const ReluNetwork noisy_net = fs::exists(dir / files::kWeights) || cfg.weights ? network_for(cfg, false)
                                                                                   : cmd_train(cfg, false);
    const ReluNetwork ideal_net =
        fs::exists(dir / files::kWeightsIdeal) ? network_for(cfg, true) : cmd_train(cfg, true);
    Timer timer(dir, "compare_training_noise");
    const Detector noisy(noisy_net, detector_config(cfg));
    const Detector ideal(ideal_net, detector_config(cfg));
    const Trajectory t = read_trajectory_csv(dir / files::trajectory(cfg.scenarios.front().name));

    TrainingNoiseResult res;
    io::CsvTable vols;
    vols.header = {"k", "log_volume_noisy", "log_volume_ideal", "noisy_smaller", "status"};
    io::CsvTable pts;
    pts.header = {"k", "tag", "i", "x", "y"};
    int smaller = 0;
    for (int k : spread_steps(cfg.N, static_cast<int>(t.measurements.rows()) - 2, cfg.training_noise_steps)) {
        const auto inputs = noisy.input_ellipsoids(t.measurements, k);
        const CertifiedBound a = certify(noisy_net, inputs, cfg.certifier);
        const CertifiedBound b = certify(ideal_net, inputs, cfg.certifier);
        TrainingNoiseRow r;
        r.k = k;
        r.solved = a.accepted && b.accepted;
        r.noisy = a.log_volume;
        r.ideal = b.log_volume;
        if (r.solved) {
            ++res.solved;
            if (r.noisy <= r.ideal) ++smaller;
            for (const auto& [tag, cb] : {std::pair<const char*, const CertifiedBound*>{"noisy", &a}, {"ideal", &b}}) {
                const Mat pb = ellipse_boundary(*cb->ellipsoid, cfg.ellipse_points);
                for (int i = 0; i < pb.rows(); ++i) {
                    pts.rows.push_back({std::to_string(k), tag, std::to_string(i), io::format_double(pb(i, 0)),
                                        io::format_double(pb(i, 1))});
                }
            }
        }
        vols.rows.push_back({std::to_string(k), io::format_double(r.noisy), io::format_double(r.ideal),
                             r.solved ? (r.noisy <= r.ideal ? "1" : "0") : "", r.solved ? "ok" : "unsolved"});
        res.rows.push_back(r);
    }
    res.fraction_noisy_smaller = res.solved ? static_cast<double>(smaller) / res.solved : 0.0;
    io::write_file_atomic(dir / files::kTrainingNoise, io::to_csv(vols));
    io::write_file_atomic(dir / files::kTrainingNoiseEllipses, io::to_csv(pts));
    write_json(dir / files::kTrainingNoiseSummary, {{"steps", res.rows.size()},
                                                    {"solved", res.solved},
                                                    {"noisy_smaller", smaller},
                                                    {"fraction_noisy_smaller", res.fraction_noisy_smaller},
                                                    {"volumes_file", files::kTrainingNoise},
                                                    {"volumes_sha256", sha_of(dir / files::kTrainingNoise)}});
    return res;
}

// ---------------------------------------------------------------------------
// Report

json cmd_report(const fs::path& dir) {
    const json manifest = read_json(dir / files::kManifest);
    const json detect = read_json(dir / files::kDetectSummary);
    if (detect.value("config_hash", "") != manifest.value("config_hash", "")) {
        throw IntegrityError("detect summary and manifest disagree on the config hash");
    }
    const ExperimentConfig cfg = config_from_json(manifest.at("config"));
    for (const auto& [name, sha] : manifest.at("files").items()) {
        if (!fs::exists(dir / name)) throw IntegrityError("missing file: " + (dir / name).string());
        if (sha_of(dir / name) != sha.get<std::string>()) throw IntegrityError("checksum mismatch: " + name);
    }

    json report;
    report["name"] = cfg.name;
    report["system"] = to_string(cfg.plant.kind);
    report["config_hash"] = manifest["config_hash"];
    report["seeds"] = manifest["seeds"];
    report["g_convention"] = manifest["g_convention"];
    report["N"] = cfg.N;
    report["p_bar"] = cfg.p_bar;
    report["false_alarm_bound"] = false_alarm_bound(cfg.p_bar, cfg.N);
    report["objective"] = detect["objective"];

    json scen = json::array();
    for (const auto& e : detect.at("scenarios")) {
        const std::string csv = e.at("alarms_file").get<std::string>();
        const fs::path path = dir / csv;
        if (!fs::exists(path)) throw IntegrityError("missing file: " + path.string());
        if (sha_of(path) != e.at("alarms_sha256").get<std::string>()) throw IntegrityError("checksum mismatch: " + csv);
        const auto records = read_alarm_csv(path);
        const AlarmSummary s = summarize(records, cfg.p_bar, cfg.N);
        const json& stored = e.at("summary");
        if (stored.at("alarms").get<std::int64_t>() != s.alarms ||
            stored.at("steps_evaluated").get<std::int64_t>() != s.steps ||
            stored.at("indeterminate").get<std::int64_t>() != s.indeterminate ||
            stored.at("alarm_rate").get<double>() != s.alarm_rate) {
            throw IntegrityError("alarm counts in " + csv + " do not match the stored summary");
        }
        std::vector<AlarmRecord> post;
        const int from = e.at("post_onset_from_k").get<int>();
        for (const auto& r : records)
            if (r.k >= from) post.push_back(r);
        const AlarmSummary ps = summarize(post, cfg.p_bar, cfg.N);
        if (e.at("post_onset").at("alarms").get<std::int64_t>() != ps.alarms ||
            e.at("post_onset").at("steps_evaluated").get<std::int64_t>() != ps.steps) {
            throw IntegrityError("post-onset counts in " + csv + " do not match the stored summary");
        }
        json r;
        r["name"] = e["name"];
        r["fault"] = e["fault"];
        if (e.contains("reference_rate")) r["reference_rate"] = e["reference_rate"];
        r["alarms_file"] = csv;
        r["alarms"] = s.alarms;
        r["steps_evaluated"] = s.steps;
        r["indeterminate"] = s.indeterminate;
        r["alarm_rate"] = s.alarm_rate;
        r["alarm_rate_rational"] = std::to_string(s.alarms) + "/" + std::to_string(s.steps);
        r["post_onset"] = summary_json(ps, post);
        r["mean_log_volume"] = stored["mean_log_volume"];
        r["mean_residual"] = stored["mean_residual"];
        scen.push_back(r);
    }
    report["scenarios"] = scen;

    for (bool ideal : {false, true}) {
        const fs::path p = dir / files::training_metrics(ideal);
        if (!fs::exists(p)) continue;
        json m = read_json(p);
        m.erase("epoch_loss");
        report[ideal ? "training_ideal" : "training"] = m;
    }

    if (fs::exists(dir / files::kSingleMulti)) {
        const io::CsvTable t = io::read_csv(dir / files::kSingleMulti);
        const int cm = t.column("log_volume_multi"), cs = t.column("log_volume_single"), st = t.column("status");
        int solved = 0, dominated = 0;
        double worst = -std::numeric_limits<double>::infinity();
        json pairs = json::array();
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            if (t.rows[i][st] != "ok") continue;
            ++solved;
            const double d = t.number(i, cm) - t.number(i, cs);
            worst = std::max(worst, d);
            if (d <= 1e-6) ++dominated;
            pairs.push_back({t.number(i, cm), t.number(i, cs)});
        }
        report["single_vs_multi"] = {{"rows", t.rows.size()},
                                {"solved", solved},
                                {"multi_not_larger", dominated},
                                {"max_difference", solved ? json(worst) : json(nullptr)},
                                {"volume_pairs", pairs}};
    }

    if (fs::exists(dir / files::kTrainingNoiseSummary)) {
        const json s = read_json(dir / files::kTrainingNoiseSummary);
        const fs::path v = dir / s.at("volumes_file").get<std::string>();
        if (!fs::exists(v)) throw IntegrityError("missing file: " + v.string());
        if (sha_of(v) != s.at("volumes_sha256").get<std::string>()) {
            throw IntegrityError("checksum mismatch: " + v.filename().string());
        }
        const io::CsvTable t = io::read_csv(v);
        const int cn = t.column("noisy_smaller");
        int solved = 0, smaller = 0;
        for (const auto& row : t.rows) {
            if (row[cn].empty()) continue;
            ++solved;
            if (row[cn] == "1") ++smaller;
        }
        if (solved != s.at("solved").get<int>() || smaller != s.at("noisy_smaller").get<int>()) {
            throw IntegrityError("training-noise counts do not match the stored summary");
        }
        report["training_noise"] = {{"solved", solved},
                                    {"noisy_smaller", smaller},
                                    {"fraction_noisy_smaller", solved ? static_cast<double>(smaller) / solved : 0.0}};
    }

    write_json(dir / files::kReport, report);

    std::ostringstream os;
    os << "experiment " << cfg.name << " (" << to_string(cfg.plant.kind) << ", N = " << cfg.N
       << ", p_bar = " << cfg.p_bar << ")\n";
    os << "config hash " << report["config_hash"].get<std::string>() << "\n";
    if (cfg.plant.kind == PlantKind::Tanks) os << "g convention: " << report["g_convention"].get<std::string>() << "\n";
    os << "false-alarm bound 1 - p_bar^(N+2) = " << report["false_alarm_bound"].get<double>() << "\n";
    for (const auto& r : scen) {
        os << "  " << r["name"].get<std::string>() << ": " << r["alarm_rate_rational"].get<std::string>()
           << " alarms (rate " << r["alarm_rate"].get<double>() << ")";
        if (r["post_onset"]["steps_evaluated"].get<std::int64_t>() != r["steps_evaluated"].get<std::int64_t>()) {
            os << ", after onset " << r["post_onset"]["alarms"].get<std::int64_t>() << "/"
               << r["post_onset"]["steps_evaluated"].get<std::int64_t>();
        }
        if (r.contains("reference_rate")) os << ", reference " << r["reference_rate"].get<double>();
        if (r["indeterminate"].get<std::int64_t>() > 0) os << ", indeterminate " << r["indeterminate"];
        os << "\n";
    }
    if (report.contains("training")) {
        os << "training: validation RMSE " << report["training"]["validation_rmse"].get<double>()
           << " (noise floor " << report["training"]["noise_floor_rmse"].get<double>() << ")\n";
    }
    if (report.contains("single_vs_multi")) {
        os << "multi vs single ellipsoid: " << report["single_vs_multi"]["multi_not_larger"] << " of "
           << report["single_vs_multi"]["solved"] << " solved steps with multi <= single + 1e-6\n";
    }
    if (report.contains("training_noise")) {
        os << "noisy-trained bound smaller in " << report["training_noise"]["noisy_smaller"] << " of "
           << report["training_noise"]["solved"] << " steps\n";
    }
    io::write_file_atomic(dir / files::kSummary, os.str());
    return report;
}

}  // namespace nnad
