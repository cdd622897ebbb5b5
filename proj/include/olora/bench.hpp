#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "olora/loss.hpp"
#include "olora/model.hpp"
#include "olora/rank_alloc.hpp"
#include "olora/tasks.hpp"

namespace olora {

enum class Method { seq_ft, seq_lora, lwf, o_lora, o_adalora, multi, mono };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::seq_ft: return "seq_ft";
        case Method::seq_lora: return "seq_lora";
        case Method::lwf: return "lwf";
        case Method::o_lora: return "o_lora";
        case Method::o_adalora: return "o_adalora";
        case Method::multi: return "multi";
        case Method::mono: return "mono";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::seq_ft, Method::seq_lora, Method::lwf, Method::o_lora,
                     Method::o_adalora, Method::multi, Method::mono}) {
        if (method_name(m) == s) return m;
    }
    throw ConfigError("unknown method '" + s + "'");
}

inline bool is_adapter_method(Method m) {
    return m == Method::seq_lora || m == Method::o_lora || m == Method::o_adalora ||
           m == Method::multi || m == Method::mono;
}

// Mono and Multi train plain LoRA: under plain SGD the SVD form's zero
// singular values give a cubic-slow cold start, which would cripple the
// toplines at these step budgets.
inline bool uses_adalora_adapters(Method m) { return m == Method::o_adalora; }

inline bool uses_lambda1(Method m) { return m == Method::o_lora || m == Method::o_adalora; }
inline bool uses_lambda2(Method m) { return m == Method::o_adalora; }

struct TrainHyper {
    int rank = 32;        // plain LoRA rank
    int rank_init = 12;   // AdaLoRA initial rank
    int rank_target = 8;  // AdaLoRA target rank
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    double lr_first = 1e-3;    // adapter methods, first task
    double lr_later = 1e-4;    // adapter methods, subsequent tasks
    double lr_full_ft = 1e-5;  // full fine-tuning (all stages)
    int steps_stage0 = 2000;
    int steps_later = 500;
    int batch_size = 8;
    int grad_accum = 1;
    double momentum = 0.0;
    double lwf_weight = 1.0;          // kappa
    bool lwf_distill_outputs = false;  // default: distill the pooled hidden state
    double importance_beta1 = 0.85;
    double importance_beta2 = 0.85;
    double budget_warmup_frac = 0.1;
    double budget_decay_end_frac = 0.7;
    int trace_every = 10;

    void validate() const {
        if (rank < 1 || rank_init < 1 || rank_target < 1) throw ConfigError("ranks must be >= 1");
        if (rank_target > rank_init) throw ConfigError("rank_target must be <= rank_init");
        if (steps_stage0 < 1 || steps_later < 1) throw ConfigError("steps must be >= 1");
        if (batch_size < 1 || grad_accum < 1) throw ConfigError("batching must be >= 1");
        if (lr_first <= 0 || lr_later <= 0 || lr_full_ft <= 0) throw ConfigError("lr must be > 0");
        if (trace_every < 1) throw ConfigError("trace_every must be >= 1");
    }
};

struct TraceRow {
    int step = 0;
    int stage = 0;
    double task_loss = 0.0;
    double orth_loss = 0.0;
    double adalora_reg = 0.0;
    double distill_loss = 0.0;
    double total_loss = 0.0;
    double lr = 0.0;
    int budget = 0;
    std::vector<int> active_ranks;  // per adapted weight; empty for non-AdaLoRA
};

struct StageResult {
    int stage = 0;
    std::string method;
    std::vector<double> eval_losses;  // per task, after this stage
    long long trainable_params = 0;
    long long total_params = 0;
    double trainable_fraction = 0.0;
    double wall_clock_sec = 0.0;
    double final_orth_fro = 0.0;  // ||A_frozen^T A_active||_F over all stacks
    std::vector<int> final_active_ranks;
    int final_total_active_rank = 0;
    std::vector<std::string> weight_names;
    std::vector<TraceRow> trace;
};

struct ForgettingReport {
    std::vector<double> per_task;  // F_n for every task trained before the final stage
    double average = 0.0;
    double final_avg_loss = 0.0;
};

/// F_n = loss_after_final_stage(n) - loss_after_stage_n(n), for tasks whose
/// stage precedes the final one.
inline ForgettingReport forgetting_report(const std::vector<StageResult>& stages) {
    if (stages.empty()) throw ProtocolError("forgetting_report: no stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].stage != static_cast<int>(i)) {
            throw ProtocolError("forgetting_report: missing stage " + std::to_string(i));
        }
        if (stages[i].eval_losses.size() != stages.front().eval_losses.size()) {
            throw ProtocolError("forgetting_report: inconsistent eval vectors");
        }
    }
    ForgettingReport out;
    const auto& final_losses = stages.back().eval_losses;
    const std::size_t n_stages = stages.size();
    for (std::size_t n = 0; n + 1 < n_stages; ++n) {
        out.per_task.push_back(final_losses[n] - stages[n].eval_losses[n]);
    }
    if (!out.per_task.empty()) {
        double s = 0.0;
        for (double f : out.per_task) s += f;
        out.average = s / static_cast<double>(out.per_task.size());
    }
    double s = 0.0;
    for (double l : final_losses) s += l;
    out.final_avg_loss = s / static_cast<double>(final_losses.size());
    return out;
}

/// Plain SGD with optional momentum. Non-trainable parameters are never
/// touched; grads are cleared after each step.
class Sgd {
public:
    Sgd(std::vector<Parameter*> params, double lr, double momentum)
        : params_(std::move(params)), lr_(lr), momentum_(momentum) {
        if (momentum_ != 0.0) {
            velocity_.reserve(params_.size());
            for (Parameter* p : params_)
                velocity_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (!p.trainable) continue;
            if (momentum_ != 0.0) {
                Matrix& v = velocity_[i];
                v *= momentum_;
                v += p.grad;
                for (std::size_t k = 0; k < p.size(); ++k)
                    p.value.data()[k] -= lr_ * v.data()[k];
            } else {
                for (std::size_t k = 0; k < p.size(); ++k)
                    p.value.data()[k] -= lr_ * p.grad.data()[k];
            }
            p.zero_grad();
        }
    }

    double lr() const { return lr_; }

private:
    std::vector<Parameter*> params_;
    double lr_;
    double momentum_;
    std::vector<Matrix> velocity_;
};

inline std::vector<double> evaluate_model(const ToyModel& model,
                                          const std::vector<SyntheticTask>& tasks) {
    const InferenceModel im = freeze_for_inference(model);
    std::vector<double> losses;
    losses.reserve(tasks.size());
    for (const SyntheticTask& task : tasks) {
        double sum = 0.0;
        for (std::size_t i = 0; i < task.eval_x.size(); ++i) {
            sum += task_loss_value({model_infer(im, task.eval_x[i])}, {task.eval_y[i]});
        }
        losses.push_back(sum / static_cast<double>(task.eval_x.size()));
    }
    return losses;
}

/// Checksums of every frozen adapter array, grouped per adapted weight in a
/// fixed order, for immutability audits. Later stages only append to each
/// weight's list; existing entries must never change.
inline std::vector<std::vector<std::uint64_t>> frozen_checksums(ToyModel& model) {
    std::vector<std::vector<std::uint64_t>> out;
    for (auto& w : model.adapted_weights()) {
        std::vector<std::uint64_t> per_weight;
        for (const Adapter& a : w.layer->stack.frozen) {
            if (const auto* l = std::get_if<LoraAdapter>(&a)) {
                per_weight.push_back(checksum(l->A.value));
                per_weight.push_back(checksum(l->B.value));
            } else {
                const auto& ad = std::get<AdaLoraAdapter>(a);
                per_weight.push_back(checksum(ad.A.value));
                per_weight.push_back(checksum(ad.lambda.value));
                per_weight.push_back(checksum(ad.B.value));
            }
        }
        out.push_back(std::move(per_weight));
    }
    return out;
}

/// True when `later` extends `earlier`: same per-weight prefixes, bit for bit.
inline bool frozen_history_preserved(const std::vector<std::vector<std::uint64_t>>& earlier,
                                     const std::vector<std::vector<std::uint64_t>>& later) {
    if (earlier.size() != later.size()) return false;
    for (std::size_t w = 0; w < earlier.size(); ++w) {
        if (later[w].size() < earlier[w].size()) return false;
        for (std::size_t i = 0; i < earlier[w].size(); ++i) {
            if (earlier[w][i] != later[w][i]) return false;
        }
    }
    return true;
}

/// One (method, seed) continual-learning run: the section-2.1 protocol made
/// executable. Stages must be run in order; each stage trains with the
/// method's own update rule and then evaluates on every task.
class ContinualRun {
public:
    ContinualRun(const BlockConfig& model_cfg, const TaskSuiteConfig& task_cfg, Method method,
                 const TrainHyper& hyper, std::uint64_t seed)
        : method_(method), hyper_(hyper), seed_(seed) {
        hyper_.validate();
        BlockConfig mc = model_cfg;
        mc.output_dim = task_cfg.output_dim;
        TaskSuiteConfig tc = task_cfg;
        tc.input_dim = mc.dim;
        tasks_ = make_task_suite(tc, mix_seed(seed, 0x7461736bull));
        task_cfg_ = tc;
        base_model_ = build_model(mc, mix_seed(seed, 0x6d6f64ull));
        model_ = base_model_;
        set_base_trainable(model_, false);
    }

    int num_stages() const { return method_ == Method::multi ? 1 : task_cfg_.num_tasks; }

    const std::vector<SyntheticTask>& tasks() const { return tasks_; }
    ToyModel& model() { return model_; }
    const std::vector<StageResult>& results() const { return results_; }
    Method method() const { return method_; }

    std::vector<double> evaluate_all() const { return evaluate_model(model_, tasks_); }

    StageResult run_stage(int stage) {
        return run_stage_with_seed(stage, mix_seed({seed_, 0x57a6eull, static_cast<std::uint64_t>(stage)}));
    }

    /// Same as run_stage but with an explicit per-stage seed (adapter init and
    /// batch order); used to show frozen history does not depend on it.
    StageResult run_stage_with_seed(int stage, std::uint64_t stage_seed) {
        if (stage != next_stage_) {
            throw ProtocolError("stages must run in order: expected " +
                                std::to_string(next_stage_) + ", got " + std::to_string(stage));
        }
        if (stage >= num_stages()) {
            throw ProtocolError("stage " + std::to_string(stage) + " out of range");
        }
        const auto t0 = std::chrono::steady_clock::now();
        StageResult res = execute_stage(stage, stage_seed);
        res.wall_clock_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++next_stage_;
        results_.push_back(res);
        return res;
    }

    std::vector<StageResult> run_all() {
        std::vector<StageResult> out;
        for (int s = 0; s < num_stages(); ++s) out.push_back(run_stage(s));
        return out;
    }

private:
    struct StageSetup {
        LossMode mode = LossMode::lora;
        std::vector<AdapterStack*> stacks;
        std::vector<Parameter*> trainable;
        std::vector<AdaLoraAdapter*> ada_actives;
        std::optional<BudgetSchedule> schedule;
        std::optional<InferenceModel> lwf_teacher;
        double lr = 0.0;
        int steps = 0;
        bool merge_after = false;  // seq_lora folds the adapter into the base
    };

    StageSetup prepare_stage(int stage, std::uint64_t stage_seed) {
        StageSetup s;
        s.steps = stage == 0 ? hyper_.steps_stage0 : hyper_.steps_later;

        if (method_ == Method::seq_ft || method_ == Method::lwf) {
            s.lr = hyper_.lr_full_ft;
            set_base_trainable(model_, true);
            s.trainable = model_.base_params();
            s.mode = LossMode::lora;  // task loss only; no adapter terms
            if (method_ == Method::lwf) {
                s.lwf_teacher = freeze_for_inference(model_);
            }
            return s;
        }

        // Adapter methods: frozen base, one fresh active adapter per weight.
        // Learning rate keys on the stage index for every method, mono
        // included, so the toplines stay step-for-step comparable.
        s.lr = stage == 0 ? hyper_.lr_first : hyper_.lr_later;
        if (method_ == Method::mono) {
            model_ = base_model_;
        }
        set_base_trainable(model_, false);

        const bool ada = uses_adalora_adapters(method_);
        int widx = 0;
        for (auto& w : model_.adapted_weights()) {
            const std::uint64_t aseed = mix_seed(stage_seed, static_cast<std::uint64_t>(widx));
            if (ada) {
                freeze_and_extend(w.layer->stack, init_adalora(w.layer->in_dim(),
                                                               w.layer->out_dim(),
                                                               hyper_.rank_init, aseed));
                auto& inst = std::get<AdaLoraAdapter>(*w.layer->stack.active);
                s.ada_actives.push_back(&inst);
                s.trainable.push_back(&inst.A);
                s.trainable.push_back(&inst.lambda);
                s.trainable.push_back(&inst.B);
            } else {
                freeze_and_extend(w.layer->stack, init_lora(w.layer->in_dim(), w.layer->out_dim(),
                                                            hyper_.rank, aseed));
                auto& inst = std::get<LoraAdapter>(*w.layer->stack.active);
                s.trainable.push_back(&inst.A);
                s.trainable.push_back(&inst.B);
            }
            s.stacks.push_back(&w.layer->stack);
            ++widx;
        }

        switch (method_) {
            case Method::seq_lora:
                s.mode = LossMode::lora;
                s.merge_after = true;
                break;
            case Method::o_lora:
                s.mode = LossMode::o_lora;
                break;
            case Method::o_adalora:
                s.mode = LossMode::o_adalora;
                break;
            case Method::multi:
            case Method::mono:
                s.mode = LossMode::lora;
                break;
            default:
                break;
        }
        if (ada) {
            s.schedule = make_schedule(hyper_.rank_init, hyper_.rank_target, s.steps,
                                       static_cast<int>(s.ada_actives.size()),
                                       hyper_.budget_warmup_frac, hyper_.budget_decay_end_frac);
        }
        return s;
    }

    /// Batch for one micro-step. Single-task stages draw from that task's
    /// pool; the multi method mixes all tasks with inverse-size weights.
    void sample_batch(int stage, Rng& rng, std::vector<Matrix>& xs, std::vector<Matrix>& ys) {
        xs.clear();
        ys.clear();
        if (method_ == Method::multi) {
            double wsum = 0.0;
            std::vector<double> weights;
            for (const auto& t : tasks_) {
                weights.push_back(1.0 / static_cast<double>(t.train_x.size()));
                wsum += weights.back();
            }
            for (int i = 0; i < hyper_.batch_size; ++i) {
                double u = rng.uniform(0.0, wsum);
                std::size_t ti = 0;
                while (ti + 1 < weights.size() && u > weights[ti]) {
                    u -= weights[ti];
                    ++ti;
                }
                const auto& task = tasks_[ti];
                const int idx = rng.uniform_int(0, static_cast<int>(task.train_x.size()) - 1);
                xs.push_back(task.train_x[idx]);
                ys.push_back(task.train_y[idx]);
            }
            return;
        }
        const auto& task = tasks_[stage];
        for (int i = 0; i < hyper_.batch_size; ++i) {
            const int idx = rng.uniform_int(0, static_cast<int>(task.train_x.size()) - 1);
            xs.push_back(task.train_x[idx]);
            ys.push_back(task.train_y[idx]);
        }
    }

    StageResult execute_stage(int stage, std::uint64_t stage_seed) {
        StageSetup setup = prepare_stage(stage, stage_seed);
        StageResult res;
        res.stage = stage;
        res.method = method_name(method_);
        for (auto& w : model_.adapted_weights()) res.weight_names.push_back(w.name);

        // Param counts reflect the training-time state, before any merging.
        const ParamCount pc = trainable_param_count(model_);
        res.trainable_params = pc.trainable;
        res.total_params = pc.total;
        res.trainable_fraction = pc.fraction;

        ImportanceState importance(hyper_.importance_beta1, hyper_.importance_beta2);
        if (!setup.ada_actives.empty()) importance.register_adapters(setup.ada_actives);
        Sgd opt(setup.trainable, setup.lr, hyper_.momentum);
        zero_grads(setup.trainable);

        Rng data_rng(mix_seed(stage_seed, 0xda7aull));
        std::vector<Matrix> xs, ys;
        const double inv_accum = 1.0 / static_cast<double>(hyper_.grad_accum);

        for (int step = 0; step < setup.steps; ++step) {
            double task_value = 0.0;
            double distill_value = 0.0;
            for (int micro = 0; micro < hyper_.grad_accum; ++micro) {
                sample_batch(stage, data_rng, xs, ys);
                Tape t;
                ForwardResult fwd = model_forward(t, model_, xs);
                Var task = task_loss(t, fwd.preds, ys);
                Var total = combined_loss(t, task, setup.stacks, setup.mode, hyper_.lambda1,
                                          hyper_.lambda2);
                if (setup.lwf_teacher.has_value()) {
                    std::vector<Matrix> teacher_out;
                    teacher_out.reserve(xs.size());
                    const bool on_preds = hyper_.lwf_distill_outputs;
                    for (const Matrix& x : xs) {
                        teacher_out.push_back(on_preds ? model_infer(*setup.lwf_teacher, x)
                                                       : model_pooled(*setup.lwf_teacher, x));
                    }
                    Var distill = task_loss(t, on_preds ? fwd.preds : fwd.pooled, teacher_out);
                    total = t.add(total, t.scale(distill, hyper_.lwf_weight));
                    distill_value += t.value(distill)(0, 0) * inv_accum;
                }
                Var scaled = hyper_.grad_accum > 1 ? t.scale(total, inv_accum) : total;
                t.backward(scaled);
                task_value += t.value(task)(0, 0) * inv_accum;
            }
            if (!setup.ada_actives.empty()) importance.update(setup.ada_actives);
            opt.step();
            int budget = 0;
            if (setup.schedule.has_value()) {
                budget = budget_at(*setup.schedule, std::min(step + 1, setup.schedule->total_steps));
                apply_budget(setup.ada_actives, importance, budget);
            }

            if (step % hyper_.trace_every == 0 || step + 1 == setup.steps) {
                std::vector<const AdapterStack*> cstacks(setup.stacks.begin(), setup.stacks.end());
                const LossBreakdown bd = loss_breakdown(task_value, cstacks, setup.mode,
                                                        hyper_.lambda1, hyper_.lambda2);
                TraceRow row;
                row.step = step;
                row.stage = stage;
                row.task_loss = bd.task_loss;
                row.orth_loss = bd.orth_loss;
                row.adalora_reg = bd.adalora_reg;
                row.distill_loss = distill_value;
                row.total_loss = bd.total + hyper_.lwf_weight * distill_value;
                row.lr = setup.lr;
                row.budget = budget;
                for (const AdaLoraAdapter* a : setup.ada_actives)
                    row.active_ranks.push_back(a->active_rank());
                res.trace.push_back(std::move(row));
            }
        }

        if (mode_uses_orth(setup.mode)) {
            std::vector<const AdapterStack*> cstacks(setup.stacks.begin(), setup.stacks.end());
            res.final_orth_fro = std::sqrt(total_orth_loss_value(cstacks));
        }
        for (const AdaLoraAdapter* a : setup.ada_actives) {
            res.final_active_ranks.push_back(a->active_rank());
            res.final_total_active_rank += a->active_rank();
        }

        if (setup.merge_after) {
            for (auto& w : model_.adapted_weights()) merge_stack(*w.layer, /*commit=*/true);
        }

        res.eval_losses = evaluate_all();
        return res;
    }

    Method method_;
    TrainHyper hyper_;
    std::uint64_t seed_;
    TaskSuiteConfig task_cfg_;
    std::vector<SyntheticTask> tasks_;
    ToyModel base_model_;  // pristine copy for mono
    ToyModel model_;
    std::vector<StageResult> results_;
    int next_stage_ = 0;
};

}  // namespace olora
