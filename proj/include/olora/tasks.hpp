#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "olora/matrix.hpp"
#include "olora/rng.hpp"

namespace olora {

/// Parameters of the synthetic sequential-task suite. Tasks are Gaussian input
/// clusters (identifiable from the inputs alone, so no task id is ever fed to
/// the model) with frozen random teacher networks producing the targets.
struct TaskSuiteConfig {
    int num_tasks = 3;
    int input_dim = 32;
    int output_dim = 8;
    int seq_len = 4;
    int train_size_task0 = 2048;
    int train_size_later = 512;
    int eval_size = 256;
    // Cluster means overlap (pairwise cosine 0.6) so sequential tasks compete
    // for the same update directions; teacher amplitudes sit near the top of
    // the SGD stability envelope so later stages still learn at the reduced
    // learning rate.
    double sigma = 0.3;        // within-cluster stddev
    double separation = 4.0;   // minimum pairwise cluster-mean distance, in sigmas
    double mean_overlap = 0.6; // pairwise cosine between cluster directions, in [0, 1)
    int teacher_hidden = 48;
    double teacher_gain = 14.0;

    void validate() const {
        if (num_tasks < 1) throw ConfigError("task suite: need at least one task");
        if (input_dim < num_tasks + 1) {
            throw ConfigError("task suite: input_dim must exceed num_tasks for separable clusters");
        }
        if (seq_len < 1 || eval_size < 1 || train_size_task0 < 1 || train_size_later < 1) {
            throw ConfigError("task suite: sizes must be positive");
        }
        if (num_tasks > 1 && train_size_task0 < 4 * train_size_later) {
            throw ConfigError("task suite: the first dataset must be at least 4x the later ones (" +
                              std::to_string(train_size_task0) + " vs " +
                              std::to_string(train_size_later) + ")");
        }
        if (separation < 4.0) {
            throw ConfigError("task suite: cluster separation must be at least 4 sigma");
        }
        if (mean_overlap < 0.0 || mean_overlap >= 1.0) {
            throw ConfigError("task suite: mean_overlap must lie in [0, 1)");
        }
        if (sigma <= 0.0 || teacher_hidden < 1) throw ConfigError("task suite: bad parameters");
    }
};

/// One task: an input sampler and a frozen random teacher, both fully
/// determined by (global seed, task index), plus materialized data pools.
struct SyntheticTask {
    int index = 0;
    Matrix mean;       // 1 x input_dim cluster center
    Matrix teacher_w1; // hidden x input_dim
    Matrix teacher_w2; // output_dim x hidden
    std::vector<Matrix> train_x, train_y;
    std::vector<Matrix> eval_x, eval_y;
};

namespace detail {

/// Cluster directions with a controlled pairwise cosine: each mean is a mix of
/// one shared direction and a task-specific orthonormal one,
/// u_n = alpha * c + beta * v_n with alpha^2 = mean_overlap. Overlapping means
/// make the tasks compete for the same update directions (interference), while
/// the orthogonal components keep every pairwise distance at
/// separation * sigma (plus 1% slack), so tasks stay identifiable from inputs.
inline std::vector<Matrix> cluster_means(const TaskSuiteConfig& cfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x636c7573ull));
    std::vector<Matrix> dirs;  // orthonormal: shared direction first, then one per task
    for (int n = 0; n < cfg.num_tasks + 1; ++n) {
        Matrix v = rng.gaussian_matrix(1, cfg.input_dim, 1.0);
        for (const Matrix& u : dirs) {
            double dot = 0.0;
            for (int j = 0; j < cfg.input_dim; ++j) dot += v(0, j) * u(0, j);
            for (int j = 0; j < cfg.input_dim; ++j) v(0, j) -= dot * u(0, j);
        }
        const double norm = std::sqrt(frobenius_sq(v));
        if (norm < 1e-8) throw NumericError("cluster means: degenerate direction");
        v *= 1.0 / norm;
        dirs.push_back(std::move(v));
    }
    const double alpha = std::sqrt(cfg.mean_overlap);
    const double beta = std::sqrt(1.0 - cfg.mean_overlap);
    const double radius = cfg.separation * cfg.sigma * 1.01 / (beta * std::sqrt(2.0));
    std::vector<Matrix> means;
    for (int n = 0; n < cfg.num_tasks; ++n) {
        Matrix u = add(scale(dirs[0], alpha), scale(dirs[n + 1], beta));
        means.push_back(scale(u, radius));
    }
    for (std::size_t i = 0; i < means.size(); ++i) {
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            const double dist = std::sqrt(frobenius_sq(sub(means[i], means[j])));
            if (dist < cfg.separation * cfg.sigma) {
                throw NumericError("cluster means: separation violated");
            }
        }
    }
    return means;
}

/// Teacher target for one example: a fixed two-layer map of the mean-pooled
/// input, y = relu(mean(x) W1^T) W2^T.
inline Matrix teacher_target(const SyntheticTask& task, const Matrix& x) {
    Matrix pool_row(1, x.rows(), 1.0 / x.rows());
    Matrix pooled = matmul(pool_row, x);
    return matmul(relu(matmul(pooled, transpose(task.teacher_w1))), transpose(task.teacher_w2));
}

inline Matrix sample_sequence(const TaskSuiteConfig& cfg, const Matrix& mean, Rng& rng) {
    Matrix x(cfg.seq_len, cfg.input_dim);
    for (int i = 0; i < cfg.seq_len; ++i)
        for (int j = 0; j < cfg.input_dim; ++j)
            x(i, j) = mean(0, j) + rng.gaussian(cfg.sigma);
    return x;
}

}  // namespace detail

inline std::vector<SyntheticTask> make_task_suite(const TaskSuiteConfig& cfg,
                                                  std::uint64_t global_seed) {
    cfg.validate();
    const auto means = detail::cluster_means(cfg, global_seed);
    std::vector<SyntheticTask> tasks;
    tasks.reserve(cfg.num_tasks);
    for (int n = 0; n < cfg.num_tasks; ++n) {
        SyntheticTask task;
        task.index = n;
        task.mean = means[n];

        Rng teacher_rng(mix_seed({global_seed, 0x7465ull, static_cast<std::uint64_t>(n)}));
        task.teacher_w1 = teacher_rng.gaussian_matrix(
            cfg.teacher_hidden, cfg.input_dim, cfg.teacher_gain / std::sqrt(cfg.input_dim));
        task.teacher_w2 = teacher_rng.gaussian_matrix(
            cfg.output_dim, cfg.teacher_hidden, cfg.teacher_gain / std::sqrt(cfg.teacher_hidden));

        const int train_n = n == 0 ? cfg.train_size_task0 : cfg.train_size_later;
        Rng train_rng(mix_seed({global_seed, 0x7472ull, static_cast<std::uint64_t>(n)}));
        for (int i = 0; i < train_n; ++i) {
            Matrix x = detail::sample_sequence(cfg, task.mean, train_rng);
            task.train_y.push_back(detail::teacher_target(task, x));
            task.train_x.push_back(std::move(x));
        }
        Rng eval_rng(mix_seed({global_seed, 0x6576ull, static_cast<std::uint64_t>(n)}));
        for (int i = 0; i < cfg.eval_size; ++i) {
            Matrix x = detail::sample_sequence(cfg, task.mean, eval_rng);
            task.eval_y.push_back(detail::teacher_target(task, x));
            task.eval_x.push_back(std::move(x));
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

/// Mean squared deviation of the eval targets from their mean: the loss an
/// output-constant predictor would incur, used as the untrained-model oracle.
inline double target_variance(const SyntheticTask& task) {
    Matrix mean(1, task.eval_y.front().cols());
    for (const Matrix& y : task.eval_y) mean += y;
    mean *= 1.0 / static_cast<double>(task.eval_y.size());
    double sum = 0.0;
    for (const Matrix& y : task.eval_y) sum += frobenius_sq(sub(y, mean));
    return sum / static_cast<double>(task.eval_y.size() * task.eval_y.front().size());
}

/// Mean squared magnitude of the eval targets (per scalar).
inline double target_second_moment(const SyntheticTask& task) {
    double sum = 0.0;
    for (const Matrix& y : task.eval_y) sum += frobenius_sq(y);
    return sum / static_cast<double>(task.eval_y.size() * task.eval_y.front().size());
}

}  // namespace olora
