#include "nnad/detector.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "nnad/io.hpp"

namespace nnad {

void DetectorConfig::validate() const {
    if (N < 0) throw ConfigError("detector: N must be >= 0");
    if (!(p_bar > 0.0 && p_bar < 1.0)) throw ConfigError("detector: p_bar must lie in (0, 1)");
    if (sigma_v.rows() == 0 || sigma_v.rows() != sigma_v.cols()) {
        throw ConfigError("detector: sigma_v must be square and nonempty");
    }
    if (threads < 0) throw ConfigError("detector: threads must be >= 0");
}

double false_alarm_bound(double p_bar, int N) {
    if (!(p_bar > 0.0 && p_bar <= 1.0)) throw DomainError("false_alarm_bound: p_bar must lie in (0, 1]");
    if (N < 0) throw DomainError("false_alarm_bound: N must be >= 0");
    return -std::expm1((N + 2) * std::log(p_bar));
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::NoAlarm: return "no_alarm";
        case Verdict::Alarm: return "alarm";
        case Verdict::Indeterminate: return "indeterminate";
    }
    return "indeterminate";
}

Verdict verdict_from_string(const std::string& s) {
    if (s == "no_alarm") return Verdict::NoAlarm;
    if (s == "alarm") return Verdict::Alarm;
    if (s == "indeterminate") return Verdict::Indeterminate;
    throw ParseError("unknown verdict '" + s + "'");
}

Detector::Detector(ReluNetwork net, DetectorConfig cfg) : net_(std::move(net)), cfg_(std::move(cfg)) {
    cfg_.validate();
    try {
        conf_ = make_confidence_spec(cfg_.p_bar, cfg_.sigma_v);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("detector: ") + e.what());
    }
    if (net_.input_dim() != conf_.p * (cfg_.N + 1) || net_.output_dim() != conf_.p) {
        throw ConfigError("detector: network shape " + std::to_string(net_.input_dim()) + " -> " +
                          std::to_string(net_.output_dim()) + " does not match p = " + std::to_string(conf_.p) +
                          ", N = " + std::to_string(cfg_.N));
    }
}

std::vector<Ellipsoid> Detector::input_ellipsoids(const Mat& measurements, int k) const {
    std::vector<Ellipsoid> out;
    for (int i = 0; i <= cfg_.N; ++i) {
        out.push_back(confidence_ellipsoid(conf_, measurements.row(k - i).transpose()));
    }
    return out;
}

AlarmRecord Detector::decide(const Ellipsoid& bound, const Vec& y_next) const {
    AlarmRecord r;
    r.measurement = y_next;
    const Ellipsoid noise(Vec::Zero(conf_.p), conf_.sigma_v_bar);
    const MinkowskiMembership m = minkowski_contains(bound, noise, y_next);
    r.verdict = m.inside ? Verdict::NoAlarm : Verdict::Alarm;
    r.margin = m.margin;
    r.kappa = m.kappa;
    r.log_volume = bound.log_volume();
    r.bound = bound;
    r.status = "ok";
    return r;
}

AlarmRecord Detector::step(const Mat& measurements, int k) const {
    detail::require_dim(measurements.cols() == conf_.p, "detector: measurement dimension mismatch");
    if (k < cfg_.N || k + 1 >= measurements.rows()) {
        throw DomainError("detector: step " + std::to_string(k) + " needs rows k-N .. k+1");
    }
    const Vec y_next = measurements.row(k + 1).transpose();
    const Vec estimate = net_.forward(regressor_window(measurements, k, cfg_.N));
    AlarmRecord r;
    try {
        const CertifiedBound cb = certify(net_, input_ellipsoids(measurements, k), cfg_.certifier);
        if (!cb.accepted) {
            r.status = sdp::to_string(cb.solver_status) + ": " + cb.message;
        } else {
            r = decide(*cb.ellipsoid, y_next);
        }
    } catch (const NumericalError& e) {
        r.status = std::string("numerical: ") + e.what();
    }
    r.k = k;
    r.measurement = y_next;
    r.estimate = estimate;
    r.residual = (estimate - y_next).norm();
    return r;
}

AlarmLog Detector::run(const Mat& measurements) const {
    if (measurements.rows() < cfg_.N + 2) {
        throw DomainError("detector: need at least N + 2 measurements");
    }
    return run(measurements, cfg_.N, static_cast<int>(measurements.rows()) - 1);
}

AlarmLog Detector::run(const Mat& measurements, int k_begin, int k_end) const {
    if (k_begin < cfg_.N || k_end > measurements.rows() - 1 || k_begin > k_end) {
        throw DomainError("detector: step range out of bounds");
    }
    AlarmLog log;
    const int n = k_end - k_begin;
    log.records.resize(n);
    const int workers = std::min(std::max(cfg_.threads, 1), std::max(n, 1));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) log.records[i] = step(measurements, k_begin + i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int i = next++; i < n; i = next++) {
                    try {
                        log.records[i] = step(measurements, k_begin + i);
                    } catch (...) {
                        const std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    log.summary = summarize(log.records, cfg_.p_bar, cfg_.N);
    return log;
}

AlarmSummary summarize(const std::vector<AlarmRecord>& records, double p_bar, int N) {
    AlarmSummary s;
    for (const auto& r : records) {
        if (r.verdict == Verdict::Indeterminate) {
            ++s.indeterminate;
            continue;
        }
        ++s.steps;
        if (r.verdict == Verdict::Alarm) ++s.alarms;
    }
    s.alarm_rate = s.steps ? static_cast<double>(s.alarms) / static_cast<double>(s.steps) : 0.0;
    s.false_alarm_bound = false_alarm_bound(p_bar, N);
    return s;
}

void write_alarm_csv(const AlarmLog& log, const std::filesystem::path& path) {
    io::CsvTable t;
    t.header = {"k", "verdict", "margin", "log_volume", "residual", "status"};
    for (const auto& r : log.records) {
        std::string status = r.status;
        for (char& c : status)
            if (c == ',' || c == '\n' || c == '\r') c = ';';
        t.rows.push_back({std::to_string(r.k), to_string(r.verdict), io::format_double(r.margin),
                          io::format_double(r.log_volume), io::format_double(r.residual), status});
    }
    io::write_file_atomic(path, io::to_csv(t));
}

std::vector<AlarmRecord> read_alarm_csv(const std::filesystem::path& path) {
    const io::CsvTable t = io::read_csv(path);
    const int ck = t.column("k"), cv = t.column("verdict"), cm = t.column("margin"), cl = t.column("log_volume"),
              cr = t.column("residual"), cs = t.column("status");
    std::vector<AlarmRecord> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        AlarmRecord r;
        r.k = static_cast<int>(t.number(i, ck));
        r.verdict = verdict_from_string(t.rows[i][cv]);
        r.margin = t.number(i, cm);
        r.log_volume = t.number(i, cl);
        r.residual = t.number(i, cr);
        r.status = t.rows[i][cs];
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json to_json(const AlarmSummary& s) {
    return {{"steps_evaluated", s.steps},
            {"alarms", s.alarms},
            {"indeterminate", s.indeterminate},
            {"alarm_rate", s.alarm_rate},
            {"false_alarm_bound", s.false_alarm_bound}};
}

}  // namespace nnad
