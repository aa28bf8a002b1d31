#include <gtest/gtest.h>

#include <random>

#include "nnad/io.hpp"
#include "nnad/plant.hpp"
#include "nnad/relu_net.hpp"
#include "test_support.hpp"

using namespace nnad;

namespace {

// W0 = I, b0 = c, W1 = I, b1 = -c: identity wherever x + c > 0.
ReluNetwork identity_network(int d, double c) {
    return ReluNetwork({Mat::Identity(d, d), Mat::Identity(d, d)},
                       {Vec::Constant(d, c), Vec::Constant(d, -c)});
}

}  // namespace

TEST(ReluNet, ForwardExamples) {
    const ReluNetwork zero({Mat::Zero(3, 2), Mat::Zero(2, 3)}, {Vec::Zero(3), Vec::Zero(2)});
    EXPECT_EQ(zero.forward(Vec2(5.0, -7.0)), Vec::Zero(2));

    std::mt19937_64 rng(1);
    const Vec b0 = Vec::Constant(3, 0.5), b1 = Vec2(1.0, -2.0);
    const Mat w1 = testing_support::random_mat(2, 3, rng, 1.0);
    const ReluNetwork constant({Mat::Zero(3, 2), w1}, {b0, b1});
    EXPECT_TRUE(constant.forward(Vec2(3.0, 4.0)).isApprox(w1 * b0 + b1));

    const ReluNetwork id = identity_network(2, 100.0);
    const Vec x = Vec2(-3.5, 42.0);
    EXPECT_LT((id.forward(x) - x).cwiseAbs().maxCoeff(), 1e-12);

    const ReluNetwork dead({Mat::Identity(2, 2), Mat::Identity(2, 2)}, {Vec::Zero(2), Vec2(0.3, 0.4)});
    EXPECT_EQ(dead.forward(Vec2(-1.0, -1.0)), Vec2(0.3, 0.4));
}

TEST(ReluNet, RejectsBadShapes) {
    EXPECT_THROW(ReluNetwork({Mat::Identity(2, 2)}, {Vec::Zero(2)}), DimensionError);
    EXPECT_ANY_THROW(ReluNetwork({Mat::Identity(2, 2), Mat::Identity(2, 3)}, {Vec::Zero(2), Vec::Zero(2)}));
    Mat w = Mat::Identity(2, 2);
    w(0, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(ReluNetwork({w, Mat::Identity(2, 2)}, {Vec::Zero(2), Vec::Zero(2)}), DomainError);
    EXPECT_ANY_THROW(identity_network(2, 1.0).forward(Vec::Zero(3)));
}

TEST(ReluNet, TraceAndArch) {
    std::mt19937_64 rng(3);
    const ReluNetwork net = testing_support::random_network({4, 10, 2, 2}, rng);
    EXPECT_EQ(net.arch(), (std::vector<int>{4, 10, 2, 2}));
    EXPECT_EQ(net.hidden_neurons(), 12);
    EXPECT_EQ(net.hidden_layers(), 2);
    const Vec x = testing_support::random_vec(4, rng, 1.0);
    const auto trace = net.forward_trace(x);
    ASSERT_EQ(trace.size(), 4u);
    EXPECT_EQ(trace.front(), x);
    EXPECT_EQ(trace.back(), net.forward(x));
    EXPECT_GE(trace[1].minCoeff(), 0.0);
}

TEST(ReluNet, SaveLoadRoundTrip) {
    const auto dir = testing_support::temp_dir("relu_roundtrip");
    std::mt19937_64 rng(17);
    const ReluNetwork net = testing_support::random_network({8, 20, 5, 2}, rng);
    save_weights(net, dir / "w.json");
    const ReluNetwork back = load_weights(dir / "w.json");
    for (int i = 0; i < 100; ++i) {
        const Vec x = testing_support::random_vec(8, rng, 3.0);
        EXPECT_EQ(net.forward(x), back.forward(x));
    }
}

TEST(ReluNet, LoadRejectsMismatchedDims) {
    const auto dir = testing_support::temp_dir("relu_bad");
    nlohmann::json j = network_to_json(identity_network(2, 1.0));
    j["weights"][1] = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    io::write_file_atomic(dir / "bad.json", j.dump());
    EXPECT_THROW(load_weights(dir / "bad.json"), ParseError);
    io::write_file_atomic(dir / "garbage.json", "{not json");
    EXPECT_THROW(load_weights(dir / "garbage.json"), ParseError);
}

TEST(ReluNet, HandWrittenIdentityFile) {
    const auto dir = testing_support::temp_dir("relu_hand");
    io::write_file_atomic(dir / "id.json", R"({
      "arch": [2, 2, 2],
      "weights": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
      "biases": [[10, 10], [-10, -10]]
    })");
    const ReluNetwork net = load_weights(dir / "id.json");
    const Vec x = Vec2(0.25, -4.0);
    EXPECT_LT((net.forward(x) - x).norm(), 1e-12);
}

TEST(ReluNet, GlorotInit) {
    const ReluNetwork a = glorot_network({4, 10, 2, 2}, 5);
    const ReluNetwork b = glorot_network({4, 10, 2, 2}, 5);
    EXPECT_EQ(a.weights()[0], b.weights()[0]);
    const double lim = std::sqrt(6.0 / 14.0);
    EXPECT_LE(a.weights()[0].cwiseAbs().maxCoeff(), lim);
    EXPECT_EQ(a.biases()[0], Vec::Zero(10));
}

// ---------------------------------------------------------------------------
// Datasets

TEST(Dataset, WindowIsNewestFirst) {
    Mat y(4, 2);
    y << 0, 1, 10, 11, 20, 21, 30, 31;
    const Vec w = regressor_window(y, 2, 1);
    EXPECT_EQ(w, (Vec(4) << 20, 21, 10, 11).finished());
    EXPECT_THROW(regressor_window(y, 0, 1), DimensionError);
}

TEST(Dataset, Counting) {
    std::mt19937_64 rng(1);
    const int N = 3;
    const Mat shortest = testing_support::random_mat(N + 2, 2, rng, 1.0);
    EXPECT_EQ(build_dataset({shortest}, N).data.size(), 1);
    const Mat longer = testing_support::random_mat(50, 2, rng, 1.0);
    const auto both = build_dataset({longer, testing_support::random_mat(N + 1, 2, rng, 1.0)}, N);
    EXPECT_EQ(both.data.size(), 50 - N - 1);
    EXPECT_EQ(both.skipped_trajectories, 1);
    EXPECT_EQ(both.data.inputs.cols(), 2 * (N + 1));
    EXPECT_EQ(both.data.labels.row(0), longer.row(N + 1));
    EXPECT_THROW(build_dataset({longer}, -1), DomainError);

    PlantConfig beam;
    const auto trajs = generate_training_set(beam, 2, 10, 4);
    const auto d = build_dataset({trajs[0].measurements, trajs[1].measurements}, 1).data;
    EXPECT_EQ(d.inputs.cols(), 4);
    EXPECT_EQ(d.labels.cols(), 2);
}

TEST(Dataset, CsvRoundTrip) {
    const auto dir = testing_support::temp_dir("dataset_csv");
    std::mt19937_64 rng(2);
    const Dataset d = build_dataset({testing_support::random_mat(30, 2, rng, 5.0)}, 2).data;
    write_dataset_csv(d, dir / "d.csv");
    const Dataset back = read_dataset_csv(dir / "d.csv", 2);
    EXPECT_EQ(back.inputs, d.inputs);
    EXPECT_EQ(back.labels, d.labels);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(99);
    const std::vector<std::vector<int>> archs = {{2, 3, 1}, {4, 5, 2}, {3, 4, 3, 2}, {4, 6, 3, 2}};
    int nets = 0;
    while (nets < 20) {
        const auto& arch = archs[nets % archs.size()];
        const ReluNetwork net = testing_support::random_network(arch, rng, 1.5, 0.5);
        const Mat x = testing_support::random_mat(6, arch.front(), rng, 1.0);
        const Mat y = testing_support::random_mat(6, arch.back(), rng, 1.0);
        // stay away from kinks: every pre-activation at least 1e-3 from zero
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
        EXPECT_NEAR(g.loss, mean_squared_error(net, x, y), 1e-12);
        const double h = 1e-6;
        double num = 0.0, den = 0.0;
        auto perturbed = [&](int layer, bool bias, int i, int j, double delta) {
            std::vector<Mat> w = net.weights();
            std::vector<Vec> b = net.biases();
            if (bias) b[layer](i) += delta;
            else w[layer](i, j) += delta;
            return mean_squared_error(ReluNetwork(w, b), x, y);
        };
        for (int t = 0; t <= net.hidden_layers(); ++t) {
            for (int i = 0; i < net.weights()[t].rows(); ++i) {
                for (int j = 0; j < net.weights()[t].cols(); ++j) {
                    const double fd = (perturbed(t, false, i, j, h) - perturbed(t, false, i, j, -h)) / (2 * h);
                    num += std::pow(fd - g.weights[t](i, j), 2);
                    den += std::pow(fd, 2);
                }
                const double fd = (perturbed(t, true, i, 0, h) - perturbed(t, true, i, 0, -h)) / (2 * h);
                num += std::pow(fd - g.biases[t](i), 2);
                den += std::pow(fd, 2);
            }
        }
        EXPECT_LT(std::sqrt(num / std::max(den, 1e-300)), 1e-4) << "network " << nets;
    }
}

TEST(Training, ConfigValidation) {
    TrainingConfig c;
    c.epochs = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainingConfig{};
    c.validation_split = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Training, LearnsLinearMap) {
    std::mt19937_64 rng(6);
    std::vector<Mat> trajs;
    for (int i = 0; i < 200; ++i) {
        Mat t(6, 2);
        t.row(0) = testing_support::random_vec(2, rng, 1.0).transpose();
        for (int k = 1; k < 6; ++k) t.row(k) = 0.5 * t.row(k - 1);
        trajs.push_back(t);
    }
    const Dataset d = build_dataset(trajs, 0).data;
    TrainingConfig cfg;
    cfg.epochs = 400;
    cfg.learning_rate = 0.01;
    cfg.seed = 3;
    const TrainingResult r = train(d, {2, 8, 2}, cfg);
    EXPECT_LT(r.report.final_validation_mse, 1e-4);
}

TEST(Training, LearnsConstant) {
    std::mt19937_64 rng(8);
    Dataset d;
    d.inputs = testing_support::random_mat(300, 3, rng, 2.0);
    d.labels = Mat::Constant(300, 2, 0.7);
    d.labels.col(1).setConstant(-1.3);
    TrainingConfig cfg;
    cfg.epochs = 300;
    cfg.learning_rate = 0.01;
    const TrainingResult r = train(d, {3, 6, 2}, cfg);
    EXPECT_LT(r.report.final_validation_mse, 1e-6);
}

TEST(Training, Deterministic) {
    std::mt19937_64 rng(8);
    Dataset d;
    d.inputs = testing_support::random_mat(100, 2, rng, 1.0);
    d.labels = d.inputs.array().square();
    TrainingConfig cfg;
    cfg.epochs = 20;
    const TrainingResult a = train(d, {2, 5, 2}, cfg);
    const TrainingResult b = train(d, {2, 5, 2}, cfg);
    EXPECT_EQ(a.network.weights()[0], b.network.weights()[0]);
    EXPECT_EQ(a.report.train_loss, b.report.train_loss);
}

TEST(Training, BeamArchitectureBeatsNoiseFloor) {
    // Labels carry measurement noise, so the held-out error is measured
    // against the noise-free next outputs.
    PlantConfig beam;
    std::vector<Mat> noisy;
    for (const auto& t : generate_training_set(beam, 200, 40, 11)) noisy.push_back(t.measurements);
    std::vector<Mat> test_noisy, test_ideal;
    for (const auto& t : generate_training_set(beam, 20, 40, 12)) {
        test_noisy.push_back(t.measurements);
        test_ideal.push_back(t.ideal);
    }
    TrainingConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.003;
    cfg.lr_decay = 0.99;
    const TrainingResult r = train(build_dataset(noisy, 1).data, {4, 10, 2, 2}, cfg);
    const Dataset in = build_dataset(test_noisy, 1).data;
    const Dataset out = build_dataset(test_ideal, 1).data;
    const double rmse = std::sqrt(mean_squared_error(r.network, in.inputs, out.labels));
    EXPECT_LT(rmse, std::sqrt(beam.beam.sigma_v.trace()));
}
