#include "nnad/relu_net.hpp"

#include <random>

#include "nnad/io.hpp"

namespace nnad {

ReluNetwork::ReluNetwork(std::vector<Mat> weights, std::vector<Vec> biases)
    : weights_(std::move(weights)), biases_(std::move(biases)) {
    if (weights_.size() < 2) {
        throw DimensionError("ReluNetwork: need at least one hidden layer (two weight matrices)");
    }
    detail::require_dim(weights_.size() == biases_.size(),
                        "ReluNetwork: weight and bias counts differ");
    for (std::size_t t = 0; t < weights_.size(); ++t) {
        const auto layer = std::to_string(t);
        detail::require_dim(weights_[t].rows() > 0 && weights_[t].cols() > 0,
                            "ReluNetwork: layer " + layer + " is empty");
        detail::require_dim(weights_[t].rows() == biases_[t].size(),
                            "ReluNetwork: layer " + layer + " bias length differs from rows");
        if (t > 0) {
            detail::require_dim(weights_[t].cols() == weights_[t - 1].rows(),
                                "ReluNetwork: layer " + layer + " input width does not chain");
        }
        if (!weights_[t].allFinite() || !biases_[t].allFinite()) {
            throw DomainError("ReluNetwork: non-finite parameter in layer " + layer);
        }
    }
}

int ReluNetwork::hidden_neurons() const {
    int n = 0;
    for (int t = 0; t < hidden_layers(); ++t) n += static_cast<int>(weights_[t].rows());
    return n;
}

std::vector<int> ReluNetwork::arch() const {
    std::vector<int> a{input_dim()};
    for (const auto& w : weights_) a.push_back(static_cast<int>(w.rows()));
    return a;
}

Vec ReluNetwork::forward(const Vec& input) const {
    detail::require_dim(input.size() == input_dim(), "ReluNetwork::forward: input dimension mismatch");
    Vec z = input;
    for (int t = 0; t < hidden_layers(); ++t) {
        z = (weights_[t] * z + biases_[t]).cwiseMax(0.0);
    }
    return weights_.back() * z + biases_.back();
}

std::vector<Vec> ReluNetwork::forward_trace(const Vec& input) const {
    detail::require_dim(input.size() == input_dim(),
                        "ReluNetwork::forward_trace: input dimension mismatch");
    std::vector<Vec> trace{input};
    for (int t = 0; t < hidden_layers(); ++t) {
        trace.push_back((weights_[t] * trace.back() + biases_[t]).cwiseMax(0.0));
    }
    trace.push_back(weights_.back() * trace.back() + biases_.back());
    return trace;
}

ReluNetwork glorot_network(const std::vector<int>& arch, std::uint64_t seed) {
    if (arch.size() < 3) throw DimensionError("glorot_network: arch needs input, >=1 hidden, output");
    std::mt19937_64 rng(seed);
    std::vector<Mat> w;
    std::vector<Vec> b;
    for (std::size_t t = 0; t + 1 < arch.size(); ++t) {
        const int fan_in = arch[t];
        const int fan_out = arch[t + 1];
        if (fan_in <= 0 || fan_out <= 0) throw DimensionError("glorot_network: nonpositive width");
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> unif(-limit, limit);
        Mat m(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) m(r, c) = unif(rng);
        w.push_back(std::move(m));
        b.push_back(Vec::Zero(fan_out));
    }
    return ReluNetwork(std::move(w), std::move(b));
}

nlohmann::json network_to_json(const ReluNetwork& net) {
    nlohmann::json j;
    j["arch"] = net.arch();
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (std::size_t t = 0; t < net.weights().size(); ++t) {
        const Mat& w = net.weights()[t];
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < w.rows(); ++r) {
            std::vector<double> row(w.cols());
            for (int c = 0; c < w.cols(); ++c) row[c] = w(r, c);
            rows.push_back(row);
        }
        weights.push_back(rows);
        const Vec& b = net.biases()[t];
        biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
    }
    j["weights"] = weights;
    j["biases"] = biases;
    return j;
}

namespace {

double number_at(const nlohmann::json& j, const std::string& path) {
    if (!j.is_number()) throw ParseError(path + ": expected number");
    return j.get<double>();
}

}  // namespace

ReluNetwork network_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("network: expected object");
    for (const char* key : {"arch", "weights", "biases"}) {
        if (!j.contains(key) || !j.at(key).is_array()) {
            throw ParseError(std::string("network.") + key + ": missing or not an array");
        }
    }
    std::vector<int> arch;
    for (std::size_t i = 0; i < j["arch"].size(); ++i) {
        const auto& a = j["arch"][i];
        if (!a.is_number_integer() || a.get<int>() <= 0) {
            throw ParseError("network.arch[" + std::to_string(i) + "]: expected positive integer");
        }
        arch.push_back(a.get<int>());
    }
    const std::size_t layers = j["weights"].size();
    if (arch.size() != layers + 1) {
        throw ParseError("network.arch: length " + std::to_string(arch.size()) +
                         " inconsistent with " + std::to_string(layers) + " weight matrices");
    }
    if (j["biases"].size() != layers) throw ParseError("network.biases: count differs from weights");

    std::vector<Mat> w;
    std::vector<Vec> b;
    for (std::size_t t = 0; t < layers; ++t) {
        const std::string wp = "network.weights[" + std::to_string(t) + "]";
        const auto& jw = j["weights"][t];
        const int rows = arch[t + 1];
        const int cols = arch[t];
        if (!jw.is_array() || static_cast<int>(jw.size()) != rows) {
            throw ParseError(wp + ": expected " + std::to_string(rows) + " rows");
        }
        Mat m(rows, cols);
        for (int r = 0; r < rows; ++r) {
            const std::string rp = wp + "[" + std::to_string(r) + "]";
            if (!jw[r].is_array() || static_cast<int>(jw[r].size()) != cols) {
                throw ParseError(rp + ": expected " + std::to_string(cols) + " columns");
            }
            for (int c = 0; c < cols; ++c) {
                m(r, c) = number_at(jw[r][c], rp + "[" + std::to_string(c) + "]");
            }
        }
        const std::string bp = "network.biases[" + std::to_string(t) + "]";
        const auto& jb = j["biases"][t];
        if (!jb.is_array() || static_cast<int>(jb.size()) != rows) {
            throw ParseError(bp + ": expected " + std::to_string(rows) + " entries");
        }
        Vec v(rows);
        for (int r = 0; r < rows; ++r) v(r) = number_at(jb[r], bp + "[" + std::to_string(r) + "]");
        w.push_back(std::move(m));
        b.push_back(std::move(v));
    }
    try {
        return ReluNetwork(std::move(w), std::move(b));
    } catch (const Error& e) {
        throw ParseError(std::string("network: ") + e.what());
    }
}

void save_weights(const ReluNetwork& net, const std::filesystem::path& path) {
    io::write_file_atomic(path, network_to_json(net).dump(2) + "\n");
}

ReluNetwork load_weights(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return network_from_json(j);
}

}  // namespace nnad
