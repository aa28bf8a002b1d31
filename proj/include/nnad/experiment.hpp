#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "nnad/certifier.hpp"
#include "nnad/detector.hpp"
#include "nnad/plant.hpp"
#include "nnad/relu_net.hpp"

namespace nnad {

struct Scenario {
    std::string name;
    FaultSpec fault;
    std::optional<double> reference_rate;  // published value, reported only
};

struct ExperimentConfig {
    std::string name = "experiment";
    PlantConfig plant;
    int N = 1;
    double p_bar = 0.95;
    std::vector<int> arch;
    TrainingConfig training;
    int train_trajectories = 200;
    int train_steps = 40;
    int detect_steps = 2000;
    /// "random", "equilibrium" (tanks only), or an explicit state.
    std::string initial_state = "random";
    Vec initial_value;
    std::vector<Scenario> scenarios;  // first one is normal operation
    std::uint64_t seed = 1;
    CertifierOptions certifier;
    int threads = 1;
    int single_multi_steps = 10;
    int training_noise_steps = 10;
    int ellipse_points = 64;
    std::filesystem::path output_dir = "run";
    std::optional<std::filesystem::path> weights;  // pretrained weights instead of training

    /// Cross-field checks; throws ConfigError before any compute.
    void validate() const;
    int p() const { return 2; }
};

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// SHA-256 of the canonical JSON form (formatting of the source file does not matter).
std::string config_hash(const ExperimentConfig& cfg);

/// Seeds derived from cfg.seed for each random stream.
struct SeedPlan {
    std::uint64_t training_data;
    std::uint64_t detection_state;
    std::uint64_t detection_noise;
    std::uint64_t training;
};
SeedPlan seed_plan(const ExperimentConfig& cfg);

/// Normal-operation and fault trajectories for detection (shared initial state and noise).
Trajectory detection_trajectory(const ExperimentConfig& cfg, const Scenario& scenario);

/// File names inside the output directory.
namespace files {
inline const char* kManifest = "manifest.json";
inline const char* kTrainNoisy = "train_noisy.csv";
inline const char* kTrainIdeal = "train_ideal.csv";
inline const char* kWeights = "weights.json";
inline const char* kWeightsIdeal = "weights_ideal.json";
inline const char* kDetectSummary = "detect_summary.json";
inline const char* kSingleMulti = "single_vs_multi.csv";
inline const char* kTrainingNoise = "training_noise.csv";
inline const char* kTrainingNoiseEllipses = "training_noise_ellipses.csv";
inline const char* kTrainingNoiseSummary = "training_noise.json";
inline const char* kReport = "report.json";
inline const char* kSummary = "summary.txt";
inline const char* kRuntime = "runtime.json";
std::string trajectory(const std::string& scenario);
std::string alarms(const std::string& scenario);
std::string training_metrics(bool ideal);
}  // namespace files

void cmd_simulate(const ExperimentConfig& cfg);
ReluNetwork cmd_train(const ExperimentConfig& cfg, bool ideal_data);

struct DetectOutcome {
    nlohmann::json summary;
    bool indeterminate_warning = false;  // more than 10% of some scenario's steps
};
DetectOutcome cmd_detect(const ExperimentConfig& cfg);

struct SingleMultiRow {
    int k = 0;
    double multi = 0.0;
    double single = 0.0;
    bool solved = false;
    std::string status;
};
std::vector<SingleMultiRow> cmd_compare_single_multi(const ExperimentConfig& cfg);

struct TrainingNoiseRow {
    int k = 0;
    double noisy = 0.0;
    double ideal = 0.0;
    bool solved = false;
};
struct TrainingNoiseResult {
    std::vector<TrainingNoiseRow> rows;
    double fraction_noisy_smaller = 0.0;
    int solved = 0;
};
TrainingNoiseResult cmd_compare_training_noise(const ExperimentConfig& cfg);

/// Recomputes every rate from the raw alarm CSVs, checks file checksums, and
/// writes report.json and summary.txt. Throws IntegrityError on any mismatch.
nlohmann::json cmd_report(const std::filesystem::path& run_dir);

/// Points on the boundary of a 2-D ellipsoid, counter-clockwise.
Mat ellipse_boundary(const Ellipsoid& e, int points);

}  // namespace nnad
