#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "nnad/relu_net.hpp"

namespace nnad {

void TrainingConfig::validate() const {
    if (epochs <= 0) throw ConfigError("training: epochs must be positive");
    if (batch_size <= 0) throw ConfigError("training: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("training: momentum must lie in [0,1)");
    if (!(validation_split > 0.0 && validation_split < 1.0)) {
        throw ConfigError("training: validation_split must lie in (0,1)");
    }
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("training: lr_decay must lie in (0,1]");
}

double mean_squared_error(const ReluNetwork& net, const Mat& inputs, const Mat& labels) {
    detail::require_dim(inputs.rows() == labels.rows(), "mean_squared_error: row counts differ");
    if (inputs.rows() == 0) return 0.0;
    double sum = 0.0;
    for (int r = 0; r < inputs.rows(); ++r) {
        sum += (net.forward(inputs.row(r).transpose()) - labels.row(r).transpose()).squaredNorm();
    }
    return sum / static_cast<double>(inputs.rows());
}

Gradients loss_gradient(const ReluNetwork& net, const Mat& inputs, const Mat& labels) {
    detail::require_dim(inputs.cols() == net.input_dim(), "loss_gradient: input width mismatch");
    detail::require_dim(labels.cols() == net.output_dim(), "loss_gradient: label width mismatch");
    detail::require_dim(inputs.rows() == labels.rows() && inputs.rows() > 0,
                        "loss_gradient: need matching, nonempty rows");
    const auto& w = net.weights();
    const auto& b = net.biases();
    const int layers = static_cast<int>(w.size());
    const double n = static_cast<double>(inputs.rows());

    // Column-per-sample activations.
    std::vector<Mat> z{inputs.transpose()};
    for (int t = 0; t + 1 < layers; ++t) {
        Mat pre = w[t] * z.back();
        pre.colwise() += b[t];
        z.push_back(pre.cwiseMax(0.0));
    }
    Mat out = w.back() * z.back();
    out.colwise() += b.back();
    const Mat err = out - labels.transpose();

    Gradients g;
    g.loss = err.squaredNorm() / n;
    g.weights.resize(layers);
    g.biases.resize(layers);
    Mat delta = (2.0 / n) * err;
    for (int t = layers - 1; t >= 0; --t) {
        g.weights[t] = delta * z[t].transpose();
        g.biases[t] = delta.rowwise().sum();
        if (t > 0) {
            // z[t] > 0 exactly where the ReLU of layer t-1 is active.
            delta = (w[t].transpose() * delta).cwiseProduct((z[t].array() > 0.0).cast<double>().matrix());
        }
    }
    return g;
}

TrainingResult train(const Dataset& data, const std::vector<int>& arch, const TrainingConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw DomainError("train: empty dataset");
    if (arch.size() < 3) throw DimensionError("train: architecture needs at least one hidden layer");
    detail::require_dim(arch.front() == data.inputs.cols(), "train: arch input width differs from dataset");
    detail::require_dim(arch.back() == data.labels.cols(), "train: arch output width differs from dataset");

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int n_val = static_cast<int>(std::floor(cfg.validation_split * data.size()));
    if (n_val >= data.size()) n_val = data.size() - 1;
    std::vector<int> val_idx(order.begin(), order.begin() + n_val);
    std::vector<int> train_idx(order.begin() + n_val, order.end());

    auto gather = [&](const std::vector<int>& idx, const Mat& src) {
        Mat m(static_cast<Eigen::Index>(idx.size()), src.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = src.row(idx[i]);
        return m;
    };

    ReluNetwork init = glorot_network(arch, rng());
    std::vector<Mat> w = init.weights();
    std::vector<Vec> b = init.biases();
    // Center every pre-activation on the training inputs (plus a small positive
    // offset) so no ReLU starts dead when raw inputs sit far from the origin;
    // the output bias starts at the mean residual label.
    {
        const int m = std::min<int>(static_cast<int>(train_idx.size()), 2048);
        const std::vector<int> probe(train_idx.begin(), train_idx.begin() + m);
        Mat z = gather(probe, data.inputs).transpose();
        for (std::size_t t = 0; t < w.size(); ++t) {
            const Mat pre = w[t] * z;
            if (t + 1 < w.size()) {
                b[t] = Vec::Constant(pre.rows(), 0.01) - pre.rowwise().mean();
                z = (pre.colwise() + b[t]).cwiseMax(0.0);
            } else {
                b[t] = gather(probe, data.labels).colwise().mean().transpose() - pre.rowwise().mean();
            }
        }
    }
    std::vector<Mat> vw;
    std::vector<Vec> vb;
    for (std::size_t t = 0; t < w.size(); ++t) {
        vw.push_back(Mat::Zero(w[t].rows(), w[t].cols()));
        vb.push_back(Vec::Zero(b[t].size()));
    }

    TrainingReport report;
    report.train_size = static_cast<int>(train_idx.size());
    report.validation_size = n_val;
    double lr = cfg.learning_rate;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<int> batch(train_idx.begin() + start, train_idx.begin() + stop);
            Gradients g;
            try {
                g = loss_gradient(ReluNetwork(w, b), gather(batch, data.inputs), gather(batch, data.labels));
            } catch (const DomainError&) {
                g.loss = std::numeric_limits<double>::infinity();
            }
            if (!std::isfinite(g.loss)) {
                throw NumericalError("train: loss became non-finite at epoch " + std::to_string(epoch) +
                                     "; reduce the learning rate");
            }
            epoch_loss += g.loss * static_cast<double>(batch.size());
            for (std::size_t t = 0; t < w.size(); ++t) {
                vw[t] = cfg.momentum * vw[t] - lr * g.weights[t];
                vb[t] = cfg.momentum * vb[t] - lr * g.biases[t];
                w[t] += vw[t];
                b[t] += vb[t];
            }
        }
        epoch_loss /= static_cast<double>(train_idx.size());
        if (!std::isfinite(epoch_loss)) {
            throw NumericalError("train: loss became non-finite at epoch " + std::to_string(epoch) +
                                 "; reduce the learning rate");
        }
        report.train_loss.push_back(epoch_loss);
        lr *= cfg.lr_decay;
    }

    ReluNetwork net(w, b);
    report.final_train_mse = mean_squared_error(net, gather(train_idx, data.inputs), gather(train_idx, data.labels));
    report.final_validation_mse =
        n_val > 0 ? mean_squared_error(net, gather(val_idx, data.inputs), gather(val_idx, data.labels))
                  : report.final_train_mse;
    return {std::move(net), std::move(report)};
}

}  // namespace nnad
