#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <vector>

#include "nnad/certifier.hpp"
#include "nnad/confidence.hpp"
#include "nnad/ellipsoid.hpp"
#include "nnad/relu_net.hpp"

namespace nnad {

struct DetectorConfig {
    int N = 1;
    double p_bar = 0.95;
    Mat sigma_v;
    CertifierOptions certifier;
    /// Worker threads for per-step certification; 0 or 1 runs inline.
    int threads = 1;

    void validate() const;
};

/// 1 - p_bar^(N + 2): per-step false-alarm bound under normal operation.
double false_alarm_bound(double p_bar, int N);

enum class Verdict { NoAlarm, Alarm, Indeterminate };

std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct AlarmRecord {
    int k = 0;             // window ends at y_k; y_{k+1} is tested
    Vec measurement;       // y_{k+1}
    std::optional<Ellipsoid> bound;
    Vec estimate;          // network output at the window
    Verdict verdict = Verdict::Indeterminate;
    double margin = 0.0;   // Minkowski membership margin (<= 1 inside)
    double kappa = 0.0;
    double log_volume = 0.0;
    double residual = 0.0; // ||estimate - y_{k+1}||
    std::string status;
};

struct AlarmSummary {
    std::int64_t steps = 0;  // evaluated steps (alarm + no alarm)
    std::int64_t alarms = 0;
    std::int64_t indeterminate = 0;
    double alarm_rate = 0.0;
    double false_alarm_bound = 0.0;
};

struct AlarmLog {
    std::vector<AlarmRecord> records;
    AlarmSummary summary;
};

class Detector {
public:
    Detector(ReluNetwork net, DetectorConfig cfg);

    const DetectorConfig& config() const { return cfg_; }
    const ConfidenceSpec& confidence() const { return conf_; }
    const ReluNetwork& network() const { return net_; }

    /// Input ellipsoids E(y_{k-i}, Sigma_v_bar), i = 0 .. N, newest first.
    std::vector<Ellipsoid> input_ellipsoids(const Mat& measurements, int k) const;

    /// Certifies the window ending at row k and tests row k + 1.
    AlarmRecord step(const Mat& measurements, int k) const;

    /// Membership test of y_next against an existing bound.
    AlarmRecord decide(const Ellipsoid& bound, const Vec& y_next) const;

    /// Every k = N .. T-2, records in time order.
    AlarmLog run(const Mat& measurements) const;

    /// Steps k in [k_begin, k_end), records in time order.
    AlarmLog run(const Mat& measurements, int k_begin, int k_end) const;

private:
    ReluNetwork net_;
    DetectorConfig cfg_;
    ConfidenceSpec conf_;
};

AlarmSummary summarize(const std::vector<AlarmRecord>& records, double p_bar, int N);

/// Columns k, verdict, margin, log_volume, residual, status.
void write_alarm_csv(const AlarmLog& log, const std::filesystem::path& path);
std::vector<AlarmRecord> read_alarm_csv(const std::filesystem::path& path);

nlohmann::json to_json(const AlarmSummary& s);

}  // namespace nnad
