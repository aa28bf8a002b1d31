#include "nnad/plant.hpp"

#include <algorithm>
#include <cmath>

#include "nnad/io.hpp"

namespace nnad {

Mat BeamParams::transition() const {
    Mat r(2, 2);
    r << std::cos(beta), -std::sin(beta), std::sin(beta), std::cos(beta);
    return contraction * r;
}

namespace {

void check_covariance(const Mat& s, const std::string& what) {
    if (s.rows() != 2 || s.cols() != 2) throw ConfigError(what + ": sigma_v must be 2x2");
    if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw ConfigError(what + ": sigma_v must be finite and symmetric");
    }
    if (Eigen::SelfAdjointEigenSolver<Mat>(s).eigenvalues().minCoeff() <= 0.0) {
        throw ConfigError(what + ": sigma_v must be positive definite");
    }
}

}  // namespace

void BeamParams::validate() const {
    if (!(std::abs(contraction) < 1.0)) throw ConfigError("beam: |contraction| must be < 1");
    if (!std::isfinite(beta)) throw ConfigError("beam: beta must be finite");
    if (!(init_low <= init_high)) throw ConfigError("beam: init_low must not exceed init_high");
    check_covariance(sigma_v, "beam");
}

double TankParams::equilibrium() const {
    const double r = q_in / (c_d * a_d);
    return r * r / (2.0 * g);
}

std::string TankParams::g_convention() const {
    if (g == 9.81) return "SI (g = 9.81)";
    if (g == 981.0) return "cgs (g = 981)";
    return "custom (g = " + io::format_double(g) + ")";
}

void TankParams::validate() const {
    if (!(q_in > 0 && c_d > 0 && a_d > 0 && g > 0 && dt > 0)) {
        throw ConfigError("tanks: q_in, c_d, a_d, g and dt must be positive");
    }
    if (substeps < 1) throw ConfigError("tanks: substeps must be >= 1");
    if (!(init_low >= 0.0 && init_low <= init_high)) throw ConfigError("tanks: need 0 <= init_low <= init_high");
    check_covariance(sigma_v, "tanks");
}

std::string to_string(FaultKind k) {
    switch (k) {
        case FaultKind::None: return "none";
        case FaultKind::Vibration: return "vibration";
        case FaultKind::SensorBias: return "sensor_bias";
        case FaultKind::DrainBlockage: return "drain_blockage";
    }
    return "none";
}

FaultKind fault_kind_from_string(const std::string& s) {
    if (s == "none") return FaultKind::None;
    if (s == "vibration") return FaultKind::Vibration;
    if (s == "sensor_bias") return FaultKind::SensorBias;
    if (s == "drain_blockage") return FaultKind::DrainBlockage;
    throw ConfigError("unknown fault kind '" + s + "'");
}

void FaultSpec::validate() const {
    if (!std::isfinite(magnitude)) throw ConfigError("fault: magnitude must be finite");
    if (onset < 0) throw ConfigError("fault: onset must be >= 0");
    if (kind == FaultKind::DrainBlockage && !(magnitude >= 0.0 && magnitude < 1.0)) {
        throw ConfigError("fault: blocked fraction must lie in [0, 1)");
    }
}

nlohmann::json to_json(const FaultSpec& f) {
    return {{"kind", to_string(f.kind)}, {"magnitude", f.magnitude}, {"onset", f.onset}};
}

FaultSpec fault_from_json(const nlohmann::json& j) {
    FaultSpec f;
    f.kind = fault_kind_from_string(j.value("kind", "none"));
    f.magnitude = j.value("magnitude", 0.0);
    f.onset = j.value("onset", 0);
    f.validate();
    return f;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Mat gaussian_noise(const Mat& sigma, int count, std::mt19937_64& rng) {
    const Eigen::LLT<Mat> llt(sigma);
    if (llt.info() != Eigen::Success) throw DomainError("gaussian_noise: covariance not positive definite");
    const Mat l = llt.matrixL();
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat out(count, sigma.rows());
    Vec u(sigma.rows());
    for (int k = 0; k < count; ++k) {
        for (int i = 0; i < u.size(); ++i) u(i) = n01(rng);
        out.row(k) = (l * u).transpose();
    }
    return out;
}

namespace {

Trajectory finish(Mat states, Mat ideal, const Mat& sigma, std::uint64_t seed, bool with_noise) {
    Trajectory t;
    t.seed = seed;
    // The noise stream is drawn separately from the initial state so both plants
    // consume it identically.
    std::mt19937_64 rng(derive_seed(seed, 0xA0153ULL));
    t.noise = with_noise ? gaussian_noise(sigma, static_cast<int>(ideal.rows()), rng)
                         : Mat::Zero(ideal.rows(), ideal.cols());
    t.measurements = ideal + t.noise;
    t.states = std::move(states);
    t.ideal = std::move(ideal);
    return t;
}

}  // namespace

Trajectory simulate_beam(const BeamParams& params, const Vec& x0, int steps, std::uint64_t seed,
                         const FaultSpec& fault, bool with_noise) {
    params.validate();
    fault.validate();
    if (steps < 1) throw DomainError("simulate_beam: steps must be >= 1");
    detail::require_dim(x0.size() == 2, "simulate_beam: x0 must have 2 entries");
    const Mat a = params.transition();
    Mat states(steps, 2);
    Mat ideal(steps, 2);
    Vec x = x0;
    for (int k = 0; k < steps; ++k) {
        Vec displaced = x;
        if (fault.active(k) && fault.kind == FaultKind::Vibration) {
            displaced.array() += fault.magnitude * std::sin(static_cast<double>(k));
            if (params.recursive_vibration) x = displaced;
        }
        states.row(k) = x.transpose();
        ideal.row(k) = displaced.transpose();
        if (fault.active(k) && fault.kind == FaultKind::SensorBias) ideal.row(k).array() += fault.magnitude;
        x = a * x;
    }
    return finish(std::move(states), std::move(ideal), params.sigma_v, seed, with_noise);
}

Trajectory simulate_tanks(const TankParams& params, const Vec& h0, int steps, std::uint64_t seed,
                          const FaultSpec& fault, bool with_noise) {
    params.validate();
    fault.validate();
    if (steps < 1) throw DomainError("simulate_tanks: steps must be >= 1");
    detail::require_dim(h0.size() == 2, "simulate_tanks: h0 must have 2 entries");
    if ((h0.array() < 0.0).any()) throw DomainError("simulate_tanks: initial levels must be >= 0");

    const double k_out = params.c_d * params.a_d * std::sqrt(2.0 * params.g);
    auto rhs = [&](const Eigen::Vector2d& h, double lower_scale) {
        const double f1 = k_out * std::sqrt(std::max(h(0), 0.0));
        const double f2 = lower_scale * k_out * std::sqrt(std::max(h(1), 0.0));
        return Eigen::Vector2d(params.q_in - f1, f1 - f2);
    };

    Mat states(steps, 2);
    Eigen::Vector2d h = h0;
    const double hs = params.dt / params.substeps;
    for (int k = 0; k < steps; ++k) {
        if (!h.allFinite()) throw NumericalError("simulate_tanks: non-finite level at step " + std::to_string(k));
        states.row(k) = h.transpose();
        // Sample k+1 integrates over [t_k, t_k + dt] with the fault state of step k+1.
        const double scale =
            fault.active(k + 1) && fault.kind == FaultKind::DrainBlockage ? 1.0 - fault.magnitude : 1.0;
        for (int s = 0; s < params.substeps; ++s) {
            const Eigen::Vector2d k1 = rhs(h, scale);
            const Eigen::Vector2d k2 = rhs((h + 0.5 * hs * k1).cwiseMax(0.0), scale);
            const Eigen::Vector2d k3 = rhs((h + 0.5 * hs * k2).cwiseMax(0.0), scale);
            const Eigen::Vector2d k4 = rhs((h + hs * k3).cwiseMax(0.0), scale);
            h = (h + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).cwiseMax(0.0);
        }
    }
    Mat ideal = states;
    if (fault.kind == FaultKind::SensorBias) {
        for (int k = fault.onset; k < steps; ++k) ideal.row(k).array() += fault.magnitude;
    }
    return finish(std::move(states), std::move(ideal), params.sigma_v, seed, with_noise);
}

std::string to_string(PlantKind k) { return k == PlantKind::Beam ? "beam" : "tanks"; }

PlantKind plant_kind_from_string(const std::string& s) {
    if (s == "beam") return PlantKind::Beam;
    if (s == "tanks") return PlantKind::Tanks;
    throw ConfigError("unknown system '" + s + "' (expected beam or tanks)");
}

Vec PlantConfig::random_initial_state(std::mt19937_64& rng) const {
    const double lo = kind == PlantKind::Beam ? beam.init_low : tanks.init_low;
    const double hi = kind == PlantKind::Beam ? beam.init_high : tanks.init_high;
    std::uniform_real_distribution<double> u(lo, hi);
    Vec x(2);
    x(0) = u(rng);
    x(1) = u(rng);
    return x;
}

Trajectory PlantConfig::simulate(const Vec& x0, int steps, std::uint64_t seed, const FaultSpec& fault,
                                 bool with_noise) const {
    return kind == PlantKind::Beam ? simulate_beam(beam, x0, steps, seed, fault, with_noise)
                                   : simulate_tanks(tanks, x0, steps, seed, fault, with_noise);
}

std::vector<Trajectory> generate_training_set(const PlantConfig& plant, int n_trajectories, int steps,
                                              std::uint64_t seed) {
    if (n_trajectories < 1 || steps < 1) throw DomainError("generate_training_set: counts must be positive");
    std::vector<Trajectory> out;
    out.reserve(n_trajectories);
    for (int i = 0; i < n_trajectories; ++i) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
        std::mt19937_64 rng(s);
        out.push_back(plant.simulate(plant.random_initial_state(rng), steps, s));
    }
    return out;
}

void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path) {
    io::CsvTable table;
    table.header = {"k"};
    const int p = static_cast<int>(t.measurements.cols());
    for (const char* prefix : {"x", "ystar", "y", "v"})
        for (int i = 0; i < p; ++i) table.header.push_back(std::string(prefix) + std::to_string(i));
    for (int k = 0; k < t.measurements.rows(); ++k) {
        std::vector<std::string> row{std::to_string(k)};
        for (const Mat* m : {&t.states, &t.ideal, &t.measurements, &t.noise})
            for (int i = 0; i < p; ++i) row.push_back(io::format_double((*m)(k, i)));
        table.rows.push_back(std::move(row));
    }
    io::write_file_atomic(path, "# seed " + std::to_string(t.seed) + "\n" + io::to_csv(table));
}

Trajectory read_trajectory_csv(const std::filesystem::path& path) {
    std::string text = io::read_file(path);
    Trajectory t;
    if (text.rfind("# seed ", 0) == 0) {
        const auto eol = text.find('\n');
        t.seed = std::stoull(text.substr(7, eol - 7));
        text.erase(0, eol + 1);
    }
    const io::CsvTable table = io::parse_csv(text);
    int p = 0;
    while (std::find(table.header.begin(), table.header.end(), "y" + std::to_string(p)) != table.header.end()) ++p;
    if (p == 0) throw ParseError(path.string() + ": no measurement columns");
    const auto rows = static_cast<int>(table.rows.size());
    t.states.resize(rows, p);
    t.ideal.resize(rows, p);
    t.measurements.resize(rows, p);
    t.noise.resize(rows, p);
    for (int i = 0; i < p; ++i) {
        const std::string s = std::to_string(i);
        const int cx = table.column("x" + s), cs = table.column("ystar" + s), cy = table.column("y" + s),
                  cv = table.column("v" + s);
        for (int k = 0; k < rows; ++k) {
            t.states(k, i) = table.number(k, cx);
            t.ideal(k, i) = table.number(k, cs);
            t.measurements(k, i) = table.number(k, cy);
            t.noise(k, i) = table.number(k, cv);
        }
    }
    return t;
}

}  // namespace nnad
