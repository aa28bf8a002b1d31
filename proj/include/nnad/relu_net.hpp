#pragma once

#include <filesystem>
#include <json.hpp>
#include <vector>

#include "nnad/types.hpp"

namespace nnad {

/**
 * Feedforward ReLU network
 *   z^0 = x,  z^{t+1} = max(0, W^t z^t + b^t)  (t = 0 .. l-1),  y = W^l z^l + b^l.
 *
 * Holds l >= 1 hidden layers, so weights().size() >= 2. Immutable once built.
 */
class ReluNetwork {
public:
    ReluNetwork(std::vector<Mat> weights, std::vector<Vec> biases);

    int input_dim() const { return static_cast<int>(weights_.front().cols()); }
    int output_dim() const { return static_cast<int>(weights_.back().rows()); }
    /// Number of hidden (activated) layers l.
    int hidden_layers() const { return static_cast<int>(weights_.size()) - 1; }
    /// Total number of hidden neurons, sum of N_1 .. N_l.
    int hidden_neurons() const;
    /// [N_0, N_1, ..., N_l, n_pi].
    std::vector<int> arch() const;

    const std::vector<Mat>& weights() const { return weights_; }
    const std::vector<Vec>& biases() const { return biases_; }

    Vec forward(const Vec& input) const;

    /// Post-activation values z^0 .. z^l followed by the output.
    std::vector<Vec> forward_trace(const Vec& input) const;

private:
    std::vector<Mat> weights_;
    std::vector<Vec> biases_;
};

/// Random network with the given architecture, weights uniform in
/// +-sqrt(6 / (fan_in + fan_out)) and zero biases.
ReluNetwork glorot_network(const std::vector<int>& arch, std::uint64_t seed);

nlohmann::json network_to_json(const ReluNetwork& net);
ReluNetwork network_from_json(const nlohmann::json& j);

void save_weights(const ReluNetwork& net, const std::filesystem::path& path);
ReluNetwork load_weights(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// NARX datasets

/// Stacks [y_k; y_{k-1}; ...; y_{k-N}] (newest first) from rows of `measurements`.
Vec regressor_window(const Mat& measurements, int k, int N);

struct Dataset {
    Mat inputs;   // one stacked window per row, p (N + 1) columns
    Mat labels;   // next measurement per row, p columns
    int size() const { return static_cast<int>(inputs.rows()); }
};

struct DatasetBuild {
    Dataset data;
    int skipped_trajectories = 0;
};

/// Each trajectory is a T x p matrix of measurements. Emits one pair per
/// k = N .. T-2; trajectories shorter than N + 2 are skipped and counted.
DatasetBuild build_dataset(const std::vector<Mat>& trajectories, int N);

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path, int label_dim);

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
    int epochs = 300;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    double validation_split = 0.2;
    /// Multiply the learning rate by this factor every epoch.
    double lr_decay = 1.0;

    void validate() const;
};

struct TrainingReport {
    std::vector<double> train_loss;       // epoch-averaged minibatch loss
    double final_train_mse = 0.0;
    double final_validation_mse = 0.0;
    int train_size = 0;
    int validation_size = 0;
};

struct TrainingResult {
    ReluNetwork network;
    TrainingReport report;
};

/// Per-sample squared prediction error averaged over rows: mean_k ||f(x_k) - y_k||^2.
double mean_squared_error(const ReluNetwork& net, const Mat& inputs, const Mat& labels);

struct Gradients {
    std::vector<Mat> weights;
    std::vector<Vec> biases;
    double loss = 0.0;
};

/// Gradient of mean_squared_error over the given rows by backpropagation.
Gradients loss_gradient(const ReluNetwork& net, const Mat& inputs, const Mat& labels);

/// Mini-batch SGD with momentum on the mean squared error; deterministic in cfg.seed.
/// Throws NumericalError if the loss becomes non-finite.
TrainingResult train(const Dataset& data, const std::vector<int>& arch, const TrainingConfig& cfg);

}  // namespace nnad
