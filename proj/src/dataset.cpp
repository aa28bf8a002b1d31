#include "nnad/io.hpp"
#include "nnad/relu_net.hpp"

namespace nnad {

Vec regressor_window(const Mat& measurements, int k, int N) {
    if (N < 0 || k < N || k >= measurements.rows()) {
        throw DimensionError("regressor_window: need N <= k < T");
    }
    const int p = static_cast<int>(measurements.cols());
    Vec w(p * (N + 1));
    for (int i = 0; i <= N; ++i) w.segment(i * p, p) = measurements.row(k - i).transpose();
    return w;
}

DatasetBuild build_dataset(const std::vector<Mat>& trajectories, int N) {
    if (N < 0) throw DomainError("build_dataset: N must be nonnegative");
    int p = -1;
    int pairs = 0;
    DatasetBuild out;
    for (const auto& traj : trajectories) {
        if (p < 0) p = static_cast<int>(traj.cols());
        detail::require_dim(traj.cols() == p, "build_dataset: trajectories differ in measurement dimension");
        if (traj.rows() < N + 2) {
            ++out.skipped_trajectories;
            continue;
        }
        pairs += static_cast<int>(traj.rows()) - N - 1;
    }
    if (p < 0) p = 0;
    out.data.inputs.resize(pairs, p * (N + 1));
    out.data.labels.resize(pairs, p);
    int row = 0;
    for (const auto& traj : trajectories) {
        if (traj.rows() < N + 2) continue;
        for (int k = N; k + 1 < traj.rows(); ++k, ++row) {
            out.data.inputs.row(row) = regressor_window(traj, k, N).transpose();
            out.data.labels.row(row) = traj.row(k + 1);
        }
    }
    return out;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
    io::CsvTable t;
    for (int c = 0; c < data.inputs.cols(); ++c) t.header.push_back("in_" + std::to_string(c));
    for (int c = 0; c < data.labels.cols(); ++c) t.header.push_back("out_" + std::to_string(c));
    for (int r = 0; r < data.size(); ++r) {
        std::vector<std::string> row;
        for (int c = 0; c < data.inputs.cols(); ++c) row.push_back(io::format_double(data.inputs(r, c)));
        for (int c = 0; c < data.labels.cols(); ++c) row.push_back(io::format_double(data.labels(r, c)));
        t.rows.push_back(std::move(row));
    }
    io::write_file_atomic(path, io::to_csv(t));
}

Dataset read_dataset_csv(const std::filesystem::path& path, int label_dim) {
    const io::CsvTable t = io::read_csv(path);
    const int cols = static_cast<int>(t.header.size());
    if (label_dim <= 0 || label_dim >= cols) throw ParseError(path.string() + ": bad label dimension");
    const int in_dim = cols - label_dim;
    Dataset d;
    d.inputs.resize(static_cast<Eigen::Index>(t.rows.size()), in_dim);
    d.labels.resize(static_cast<Eigen::Index>(t.rows.size()), label_dim);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (int c = 0; c < in_dim; ++c) d.inputs(r, c) = t.number(r, c);
        for (int c = 0; c < label_dim; ++c) d.labels(r, c) = t.number(r, in_dim + c);
    }
    return d;
}

}  // namespace nnad
