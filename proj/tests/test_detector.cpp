#include <gtest/gtest.h>

#include <random>

#include "nnad/detector.hpp"
#include "nnad/plant.hpp"
#include "test_support.hpp"

using namespace nnad;

namespace {

const Mat kSigmaV = (Mat(2, 2) << 0.0214, 0.0112, 0.0112, 0.0217).finished();

// Exact one-step beam model on [y_k; y_{k-1}], valid while A y_k + c > 0.
ReluNetwork beam_model(double c = 100.0) {
    const Mat a = BeamParams{}.transition();
    Mat w0 = Mat::Zero(2, 4);
    w0.leftCols(2) = a;
    return ReluNetwork({w0, Mat::Identity(2, 2)}, {Vec::Constant(2, c), Vec::Constant(2, -c)});
}

DetectorConfig beam_config() {
    DetectorConfig c;
    c.N = 1;
    c.p_bar = 0.95;
    c.sigma_v = kSigmaV;
    return c;
}

class FailingBackend final : public sdp::Backend {
public:
    std::string name() const override { return "failing"; }
    bool supports_logdet() const override { return true; }
    bool thread_safe() const override { return true; }
    sdp::Result solve(const sdp::Problem& p) const override {
        sdp::Result r;
        r.status = sdp::Status::NumericalFailure;
        r.x = p.start;
        r.message = "forced, for testing";
        return r;
    }
};

}  // namespace

TEST(FalseAlarmBound, Values) {
    EXPECT_NEAR(false_alarm_bound(0.95, 1), 0.142625, 1e-6);
    EXPECT_NEAR(false_alarm_bound(0.95, 3), 0.226219, 1e-6);
    EXPECT_NEAR(false_alarm_bound(1.0 - 1e-15, 5), 0.0, 1e-13);
    EXPECT_THROW(false_alarm_bound(0.0, 1), DomainError);
    EXPECT_THROW(false_alarm_bound(0.9, -1), DomainError);
}

TEST(Detector, ConfigValidation) {
    DetectorConfig c = beam_config();
    c.N = -1;
    EXPECT_THROW(Detector(beam_model(), c), ConfigError);
    c = beam_config();
    c.p_bar = 1.0;
    EXPECT_THROW(Detector(beam_model(), c), ConfigError);
    c = beam_config();
    c.N = 2;  // network expects N = 1
    EXPECT_THROW(Detector(beam_model(), c), ConfigError);
}

TEST(Detector, DecideCenterAndFar) {
    const Detector det(beam_model(), beam_config());
    const Ellipsoid bound(Vec2(0.4, -0.1), 0.05 * Mat::Identity(2, 2));
    EXPECT_EQ(det.decide(bound, bound.center()).verdict, Verdict::NoAlarm);
    const AlarmRecord far = det.decide(bound, bound.center() + Vec2(3.0, 3.0));
    EXPECT_EQ(far.verdict, Verdict::Alarm);
    EXPECT_GE(far.margin, 10.0);
}

TEST(Detector, PerfectModelNeverAlarmsOnNoiseFreeData) {
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(1.5, -1.0), 60, 3, {}, false);
    const Detector det(beam_model(), beam_config());
    const AlarmLog log = det.run(t.measurements);
    EXPECT_EQ(log.summary.steps, 58);
    EXPECT_EQ(log.summary.alarms, 0);
    EXPECT_EQ(log.summary.indeterminate, 0);
    for (const auto& r : log.records) EXPECT_LT(r.residual, 1e-12);
}

TEST(Detector, PerfectModelRateWithinBound) {
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(0.5, 0.5), 400, 8);
    const Detector det(beam_model(), beam_config());
    const AlarmLog log = det.run(t.measurements);
    EXPECT_EQ(log.summary.indeterminate, 0);
    EXPECT_LE(log.summary.alarm_rate, false_alarm_bound(0.95, 1));
}

TEST(Detector, FaultRaisesAlarms) {
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(0.5, 0.5), 200, 8, {FaultKind::SensorBias, 3.0, 100});
    const Detector det(beam_model(), beam_config());
    const AlarmLog log = det.run(t.measurements);
    // the jump at onset enters as y_{k+1}
    EXPECT_EQ(log.records[100 - 1 - 1].verdict, Verdict::Alarm);
}

TEST(Detector, IndeterminateStepsAreCountedSeparately) {
    DetectorConfig c = beam_config();
    c.certifier.backend = std::make_shared<FailingBackend>();
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(0.5, 0.5), 12, 8);
    const AlarmLog log = Detector(beam_model(), c).run(t.measurements);
    EXPECT_EQ(log.summary.indeterminate, 10);
    EXPECT_EQ(log.summary.steps, 0);
    EXPECT_EQ(log.summary.alarm_rate, 0.0);
    for (const auto& r : log.records) {
        EXPECT_EQ(r.verdict, Verdict::Indeterminate);
        EXPECT_NE(r.status.find("forced"), std::string::npos);
    }
}

TEST(Detector, SummaryArithmetic) {
    std::vector<AlarmRecord> rs(7);
    rs[0].verdict = rs[3].verdict = Verdict::Alarm;
    for (int i : {1, 2, 4, 5}) rs[i].verdict = Verdict::NoAlarm;
    const AlarmSummary s = summarize(rs, 0.95, 1);
    EXPECT_EQ(s.steps, 6);
    EXPECT_EQ(s.alarms, 2);
    EXPECT_EQ(s.indeterminate, 1);
    EXPECT_EQ(s.alarm_rate, 2.0 / 6.0);
}

TEST(Detector, LargerNoiseTermNeverAddsAlarms) {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 500; ++i) {
        const auto inst = testing_support::random_minkowski_instance(rng);
        const bool inside = minkowski_contains(inst.e1, inst.e2, inst.point).inside;
        for (double c : {1.01, 1.5, 4.0}) {
            const Ellipsoid bigger(inst.e2.center(), c * inst.e2.shape());
            if (inside) EXPECT_TRUE(minkowski_contains(inst.e1, bigger, inst.point).inside);
        }
    }
}

TEST(Detector, InvariantUnderOrthonormalRebasis) {
    std::mt19937_64 rng(41);
    const Mat T = testing_support::random_orthonormal(2, rng);
    const ReluNetwork net = testing_support::random_network({4, 8, 2}, rng, 1.0, 0.3);
    Mat w0 = net.weights()[0];
    w0.leftCols(2) *= T.transpose();
    w0.rightCols(2) *= T.transpose();
    const ReluNetwork rotated({w0, T * net.weights()[1]}, {net.biases()[0], T * net.biases()[1]});
    DetectorConfig c = beam_config(), cr = beam_config();
    cr.sigma_v = T * kSigmaV * T.transpose();
    const Detector a(net, c), b(rotated, cr);

    const Mat y = testing_support::random_mat(40, 2, rng, 1.0);
    const Mat yr = y * T.transpose();
    int compared = 0;
    for (int k = 1; k + 1 < y.rows(); ++k) {
        const AlarmRecord ra = a.step(y, k), rb = b.step(yr, k);
        ASSERT_NE(ra.verdict, Verdict::Indeterminate) << ra.status;
        ASSERT_NE(rb.verdict, Verdict::Indeterminate) << rb.status;
        EXPECT_NEAR(ra.log_volume, rb.log_volume, 1e-5);
        if (std::abs(ra.margin - 1.0) < 1e-4) continue;
        EXPECT_EQ(ra.verdict, rb.verdict) << "k = " << k;
        ++compared;
    }
    EXPECT_GT(compared, 30);
}

TEST(Detector, ThreadedRunMatchesSequential) {
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(0.5, 0.5), 30, 8);
    DetectorConfig c = beam_config();
    const AlarmLog seq = Detector(beam_model(), c).run(t.measurements);
    c.threads = 3;
    const AlarmLog par = Detector(beam_model(), c).run(t.measurements);
    ASSERT_EQ(seq.records.size(), par.records.size());
    for (std::size_t i = 0; i < seq.records.size(); ++i) {
        EXPECT_EQ(seq.records[i].k, par.records[i].k);
        EXPECT_EQ(seq.records[i].verdict, par.records[i].verdict);
        EXPECT_EQ(seq.records[i].margin, par.records[i].margin);
    }
}

TEST(Detector, AlarmCsvRoundTrip) {
    const auto dir = testing_support::temp_dir("alarm_csv");
    const Trajectory t = simulate_beam(BeamParams{}, Vec2(0.5, 0.5), 15, 8);
    AlarmLog log = Detector(beam_model(), beam_config()).run(t.measurements);
    log.records[2].status = "odd, status\nwith newline";
    write_alarm_csv(log, dir / "a.csv");
    const auto back = read_alarm_csv(dir / "a.csv");
    ASSERT_EQ(back.size(), log.records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].k, log.records[i].k);
        EXPECT_EQ(back[i].verdict, log.records[i].verdict);
        EXPECT_EQ(back[i].margin, log.records[i].margin);
        EXPECT_EQ(back[i].log_volume, log.records[i].log_volume);
    }
    EXPECT_EQ(back[2].status, "odd; status;with newline");
    EXPECT_THROW(verdict_from_string("maybe"), ParseError);
}

TEST(Detector, StepRangeChecks) {
    const Detector det(beam_model(), beam_config());
    const Mat y = Mat::Zero(5, 2);
    EXPECT_THROW(det.step(y, 0), DomainError);
    EXPECT_THROW(det.step(y, 4), DomainError);
    EXPECT_THROW(det.run(Mat::Zero(2, 2)), DomainError);
}
