#pragma once

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "olora/adapter.hpp"

namespace olora {

/// Total active-rank budget schedule: hold at N*r_init through warmup, cubic
/// decay to N*r_target, hold there to the end.
struct BudgetSchedule {
    int r_init = 12;
    int r_target = 8;
    int warmup_steps = 0;
    int decay_end_step = 0;
    int total_steps = 0;
    int num_weights = 0;  // N, the number of adapted weight matrices

    void validate() const {
        if (r_target > r_init) {
            throw ConfigError("budget schedule: r_target " + std::to_string(r_target) +
                              " exceeds r_init " + std::to_string(r_init));
        }
        if (warmup_steps > decay_end_step || decay_end_step > total_steps) {
            throw ConfigError("budget schedule: need warmup <= decay_end <= total, got " +
                              std::to_string(warmup_steps) + ", " + std::to_string(decay_end_step) +
                              ", " + std::to_string(total_steps));
        }
        if (num_weights < 1) throw ConfigError("budget schedule: num_weights must be positive");
    }
};

inline BudgetSchedule make_schedule(int r_init, int r_target, int total_steps, int num_weights,
                                    double warmup_frac = 0.1, double decay_end_frac = 0.7) {
    BudgetSchedule s;
    s.r_init = r_init;
    s.r_target = r_target;
    s.total_steps = total_steps;
    s.warmup_steps = static_cast<int>(std::lround(warmup_frac * total_steps));
    s.decay_end_step = static_cast<int>(std::lround(decay_end_frac * total_steps));
    s.num_weights = num_weights;
    s.validate();
    return s;
}

inline int budget_at(const BudgetSchedule& s, int step) {
    s.validate();
    if (step < 0 || step > s.total_steps) {
        throw RangeError("budget_at: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(s.total_steps) + "]");
    }
    const int hi = s.num_weights * s.r_init;
    const int lo = s.num_weights * s.r_target;
    if (step < s.warmup_steps) return hi;
    if (step >= s.decay_end_step) return lo;
    const double tau = static_cast<double>(step - s.warmup_steps) /
                       static_cast<double>(s.decay_end_step - s.warmup_steps);
    const double keep = 1.0 - tau;
    return static_cast<int>(std::lround(lo + (hi - lo) * keep * keep * keep));
}

/// Exponentially smoothed sensitivity (|theta * grad|) and uncertainty
/// statistics for every scalar of every registered AdaLoRA adapter, and the
/// triplet scores derived from them.
class ImportanceState {
public:
    // beta = 0 disables smoothing entirely, hence [0, 1) rather than (0, 1).
    ImportanceState(double beta1 = 0.85, double beta2 = 0.85) : beta1_(beta1), beta2_(beta2) {
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ConfigError("importance smoothing factors must lie in [0, 1)");
        }
    }

    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }

    /// Statistics exist only for the adapters registered here; re-register at
    /// the start of each stage.
    void register_adapters(const std::vector<AdaLoraAdapter*>& adapters) {
        stats_.clear();
        stats_.reserve(adapters.size());
        for (const AdaLoraAdapter* a : adapters) {
            WeightStats w;
            w.a = Ema(a->A.value.rows(), a->A.value.cols());
            w.lambda = Ema(1, a->rank);
            w.b = Ema(a->B.value.rows(), a->B.value.cols());
            stats_.push_back(std::move(w));
        }
    }

    bool registered() const { return !stats_.empty(); }

    /// Folds the current |theta * grad| sensitivities into the EMAs. Call after
    /// backward and before the optimizer clears the grads.
    void update(const std::vector<AdaLoraAdapter*>& adapters) {
        check_shapes(adapters);
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            update_one(stats_[i].a, adapters[i]->A);
            update_one(stats_[i].lambda, adapters[i]->lambda);
            update_one(stats_[i].b, adapters[i]->B);
        }
    }

    /// Copies of one adapter's smoothed statistics, for inspection.
    struct Snapshot {
        Matrix a_s, a_u;
        Matrix lambda_s, lambda_u;
        Matrix b_s, b_u;
    };

    Snapshot snapshot(std::size_t j) const {
        if (j >= stats_.size()) throw RangeError("importance snapshot: index out of range");
        const WeightStats& w = stats_[j];
        return Snapshot{w.a.s, w.a.u, w.lambda.s, w.lambda.u, w.b.s, w.b.u};
    }

    /// score(j, k) = I(lambda_j[k]) * mean_i I(A_j[i,k]) * mean_i I(B_j[k,i])
    /// with I = ema_sensitivity * ema_uncertainty.
    std::vector<std::vector<double>> triplet_scores(
        const std::vector<AdaLoraAdapter*>& adapters) const {
        check_shapes(adapters);
        std::vector<std::vector<double>> scores(adapters.size());
        for (std::size_t j = 0; j < adapters.size(); ++j) {
            const WeightStats& w = stats_[j];
            const int r = adapters[j]->rank;
            const int d1 = adapters[j]->A.value.rows();
            const int d2 = adapters[j]->B.value.cols();
            scores[j].resize(r);
            for (int k = 0; k < r; ++k) {
                double a_mean = 0.0;
                for (int i = 0; i < d1; ++i) a_mean += w.a.s(i, k) * w.a.u(i, k);
                a_mean /= d1;
                double b_mean = 0.0;
                for (int i = 0; i < d2; ++i) b_mean += w.b.s(k, i) * w.b.u(k, i);
                b_mean /= d2;
                scores[j][k] = w.lambda.s(0, k) * w.lambda.u(0, k) * a_mean * b_mean;
            }
        }
        return scores;
    }

private:
    struct Ema {
        Matrix s;  // smoothed sensitivity
        Matrix u;  // smoothed uncertainty
        Ema() = default;
        Ema(int rows, int cols) : s(rows, cols), u(rows, cols) {}
    };

    struct WeightStats {
        Ema a, lambda, b;
    };

    void update_one(Ema& e, const Parameter& p) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double sens = std::fabs(p.value.data()[i] * p.grad.data()[i]);
            const double s_new = beta1_ * e.s.data()[i] + (1.0 - beta1_) * sens;
            e.s.data()[i] = s_new;
            e.u.data()[i] = beta2_ * e.u.data()[i] + (1.0 - beta2_) * std::fabs(sens - s_new);
        }
    }

    void check_shapes(const std::vector<AdaLoraAdapter*>& adapters) const {
        if (stats_.size() != adapters.size()) {
            throw StateError("importance state tracks " + std::to_string(stats_.size()) +
                             " adapters but " + std::to_string(adapters.size()) + " were given");
        }
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            if (!stats_[i].a.s.same_shape(adapters[i]->A.value) ||
                !stats_[i].b.s.same_shape(adapters[i]->B.value) ||
                stats_[i].lambda.s.cols() != adapters[i]->rank) {
                throw StateError("importance state shapes do not match adapter " +
                                 std::to_string(i) + "; gradients/state are stale");
            }
        }
    }

    double beta1_;
    double beta2_;
    std::vector<WeightStats> stats_;
};

/// Keeps the `budget` highest-scoring triplets active across all adapters and
/// masks the rest. Masked lambda entries are zeroed in storage, but A/B columns
/// are retained: this is masking, not pruning, so a triplet may reactivate.
inline void apply_budget(const std::vector<AdaLoraAdapter*>& adapters,
                         const std::vector<std::vector<double>>& scores, int budget) {
    int total = 0;
    for (const AdaLoraAdapter* a : adapters) total += a->rank;
    if (budget < 0 || budget > total) {
        throw RangeError("apply_budget: budget " + std::to_string(budget) +
                         " outside [0, " + std::to_string(total) + "]");
    }

    // (score desc, weight index asc, singular index asc) -- deterministic ties.
    std::vector<std::tuple<double, int, int>> order;
    order.reserve(total);
    for (std::size_t j = 0; j < adapters.size(); ++j)
        for (int k = 0; k < adapters[j]->rank; ++k)
            order.emplace_back(scores[j][k], static_cast<int>(j), k);
    std::sort(order.begin(), order.end(), [](const auto& x, const auto& y) {
        if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
        if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
        return std::get<2>(x) < std::get<2>(y);
    });

    for (AdaLoraAdapter* a : adapters) a->mask.assign(a->mask.size(), 0);
    for (int i = 0; i < budget; ++i) {
        adapters[std::get<1>(order[i])]->mask[std::get<2>(order[i])] = 1;
    }
    for (AdaLoraAdapter* a : adapters) {
        for (int k = 0; k < a->rank; ++k) {
            if (!a->mask[k]) a->lambda.value(0, k) = 0.0;
        }
    }
}

inline void apply_budget(const std::vector<AdaLoraAdapter*>& adapters, const ImportanceState& state,
                         int budget) {
    apply_budget(adapters, state.triplet_scores(adapters), budget);
}

}  // namespace olora
