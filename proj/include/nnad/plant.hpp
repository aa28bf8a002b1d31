#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "nnad/types.hpp"

namespace nnad {

struct BeamParams {
    double contraction = 0.8;
    double beta = 3.0 * 3.14159265358979323846 / 5.0;  // rotation per step, radians
    Mat sigma_v = (Mat(2, 2) << 0.0214, 0.0112, 0.0112, 0.0217).finished();
    double init_low = -2.0;  // initial states uniform on [init_low, init_high]^2
    double init_high = 2.0;
    /// Feed the vibration displacement back into the recursion instead of
    /// adding it to the measured state only.
    bool recursive_vibration = false;

    Mat transition() const;
    void validate() const;
};

struct TankParams {
    double q_in = 15.0;
    double c_d = 0.9;
    double a_d = 1.0;
    double g = 9.81;  // 981 for the cgs convention
    double dt = 0.02;
    int substeps = 10;
    Mat sigma_v = (Mat(2, 2) << 0.0214, 0.0112, 0.0112, 0.0217).finished();
    double init_low = 5.0;
    double init_high = 25.0;

    /// Upper-tank equilibrium (q_in / (c_d a_d))^2 / (2 g); also the lower one without faults.
    double equilibrium() const;
    std::string g_convention() const;
    void validate() const;
};

enum class FaultKind { None, Vibration, SensorBias, DrainBlockage };

std::string to_string(FaultKind k);
FaultKind fault_kind_from_string(const std::string& s);

struct FaultSpec {
    FaultKind kind = FaultKind::None;
    double magnitude = 0.0;  // delta_1, delta_2, or the blocked fraction
    int onset = 0;

    bool active(int k) const { return kind != FaultKind::None && k >= onset; }
    void validate() const;
};

nlohmann::json to_json(const FaultSpec& f);
FaultSpec fault_from_json(const nlohmann::json& j);

/// One row per sample k = 0 .. steps-1. `ideal` includes fault effects
/// (sensor bias, displacement), so measurements = ideal + noise holds exactly.
struct Trajectory {
    Mat states;        // plant state (undisplaced beam state / tank levels)
    Mat ideal;         // y*_k
    Mat measurements;  // y_k
    Mat noise;         // v_k
    std::uint64_t seed = 0;
};

/// Seed of the i-th independent stream derived from `base` (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// i.i.d. N(0, sigma) draws, one per row.
Mat gaussian_noise(const Mat& sigma, int count, std::mt19937_64& rng);

Trajectory simulate_beam(const BeamParams& params, const Vec& x0, int steps, std::uint64_t seed,
                         const FaultSpec& fault = {}, bool with_noise = true);

Trajectory simulate_tanks(const TankParams& params, const Vec& h0, int steps, std::uint64_t seed,
                          const FaultSpec& fault = {}, bool with_noise = true);

enum class PlantKind { Beam, Tanks };

std::string to_string(PlantKind k);
PlantKind plant_kind_from_string(const std::string& s);

struct PlantConfig {
    PlantKind kind = PlantKind::Beam;
    BeamParams beam;
    TankParams tanks;

    const Mat& sigma_v() const { return kind == PlantKind::Beam ? beam.sigma_v : tanks.sigma_v; }
    /// Initial state drawn from the documented box.
    Vec random_initial_state(std::mt19937_64& rng) const;
    Trajectory simulate(const Vec& x0, int steps, std::uint64_t seed, const FaultSpec& fault = {},
                        bool with_noise = true) const;
};

/// Trajectory i uses seed derive_seed(seed, i) for both its initial state and noise.
std::vector<Trajectory> generate_training_set(const PlantConfig& plant, int n_trajectories, int steps,
                                              std::uint64_t seed);

/// Columns k, x_i, ystar_i, y_i, v_i.
void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path);
Trajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace nnad
