#pragma once

#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "olora/bench.hpp"
#include "olora/serialize.hpp"

namespace olora {

/// Everything needed to reproduce an experiment: (RunConfig, seed) determines
/// every array in the run.
struct RunConfig {
    std::string method = "o_lora";
    std::vector<int> seeds = {0, 1, 2, 3, 4};
    std::string out_dir = "runs/out";
    BlockConfig model;
    TaskSuiteConfig tasks;
    TrainHyper train;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    void validate() const {
        parse_method(method);
        if (seeds.empty()) throw ConfigError("config: at least one seed is required");
        model.validate();
        tasks.validate();
        train.validate();
    }
};

inline json config_to_json(const RunConfig& c) {
    json j;
    j["method"] = c.method;
    j["seeds"] = c.seeds;
    j["out_dir"] = c.out_dir;
    j["model"] = {{"dim", c.model.dim},
                  {"ff_dim", c.model.ff_dim},
                  {"heads", c.model.heads},
                  {"blocks", c.model.blocks},
                  {"output_dim", c.model.output_dim}};
    j["tasks"] = {{"num_tasks", c.tasks.num_tasks},
                  {"seq_len", c.tasks.seq_len},
                  {"train_size_task0", c.tasks.train_size_task0},
                  {"train_size_later", c.tasks.train_size_later},
                  {"eval_size", c.tasks.eval_size},
                  {"sigma", c.tasks.sigma},
                  {"separation", c.tasks.separation},
                  {"mean_overlap", c.tasks.mean_overlap},
                  {"teacher_hidden", c.tasks.teacher_hidden},
                  {"teacher_gain", c.tasks.teacher_gain}};
    j["train"] = {{"rank", c.train.rank},
                  {"rank_init", c.train.rank_init},
                  {"rank_target", c.train.rank_target},
                  {"lambda1", c.train.lambda1},
                  {"lambda2", c.train.lambda2},
                  {"lr_first", c.train.lr_first},
                  {"lr_later", c.train.lr_later},
                  {"lr_full_ft", c.train.lr_full_ft},
                  {"steps_stage0", c.train.steps_stage0},
                  {"steps_later", c.train.steps_later},
                  {"batch_size", c.train.batch_size},
                  {"grad_accum", c.train.grad_accum},
                  {"momentum", c.train.momentum},
                  {"lwf_weight", c.train.lwf_weight},
                  {"lwf_distill_outputs", c.train.lwf_distill_outputs},
                  {"importance_beta1", c.train.importance_beta1},
                  {"importance_beta2", c.train.importance_beta2},
                  {"budget_warmup_frac", c.train.budget_warmup_frac},
                  {"budget_decay_end_frac", c.train.budget_decay_end_frac},
                  {"trace_every", c.train.trace_every}};
    return j;
}

namespace detail {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

/// Parses a config JSON over the defaults; unknown keys are config errors so
/// that typos never silently fall back to defaults.
inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    static const std::set<std::string> top_keys = {"method", "seeds", "out_dir",
                                                   "model", "tasks", "train"};
    for (const auto& [key, _] : j.items()) {
        if (!top_keys.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    }
    detail::read_field(j, "method", c.method);
    detail::read_field(j, "seeds", c.seeds);
    detail::read_field(j, "out_dir", c.out_dir);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::read_field(m, "dim", c.model.dim);
        detail::read_field(m, "ff_dim", c.model.ff_dim);
        detail::read_field(m, "heads", c.model.heads);
        detail::read_field(m, "blocks", c.model.blocks);
        detail::read_field(m, "output_dim", c.model.output_dim);
    }
    if (j.contains("tasks")) {
        const auto& t = j.at("tasks");
        detail::read_field(t, "num_tasks", c.tasks.num_tasks);
        detail::read_field(t, "seq_len", c.tasks.seq_len);
        detail::read_field(t, "train_size_task0", c.tasks.train_size_task0);
        detail::read_field(t, "train_size_later", c.tasks.train_size_later);
        detail::read_field(t, "eval_size", c.tasks.eval_size);
        detail::read_field(t, "sigma", c.tasks.sigma);
        detail::read_field(t, "separation", c.tasks.separation);
        detail::read_field(t, "mean_overlap", c.tasks.mean_overlap);
        detail::read_field(t, "teacher_hidden", c.tasks.teacher_hidden);
        detail::read_field(t, "teacher_gain", c.tasks.teacher_gain);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::read_field(t, "rank", c.train.rank);
        detail::read_field(t, "rank_init", c.train.rank_init);
        detail::read_field(t, "rank_target", c.train.rank_target);
        detail::read_field(t, "lambda1", c.train.lambda1);
        detail::read_field(t, "lambda2", c.train.lambda2);
        detail::read_field(t, "lr_first", c.train.lr_first);
        detail::read_field(t, "lr_later", c.train.lr_later);
        detail::read_field(t, "lr_full_ft", c.train.lr_full_ft);
        detail::read_field(t, "steps_stage0", c.train.steps_stage0);
        detail::read_field(t, "steps_later", c.train.steps_later);
        detail::read_field(t, "batch_size", c.train.batch_size);
        detail::read_field(t, "grad_accum", c.train.grad_accum);
        detail::read_field(t, "momentum", c.train.momentum);
        detail::read_field(t, "lwf_weight", c.train.lwf_weight);
        detail::read_field(t, "lwf_distill_outputs", c.train.lwf_distill_outputs);
        detail::read_field(t, "importance_beta1", c.train.importance_beta1);
        detail::read_field(t, "importance_beta2", c.train.importance_beta2);
        detail::read_field(t, "budget_warmup_frac", c.train.budget_warmup_frac);
        detail::read_field(t, "budget_decay_end_frac", c.train.budget_decay_end_frac);
        detail::read_field(t, "trace_every", c.train.trace_every);
    }
    c.validate();
    return c;
}

/// Methods that do not use a lambda coefficient ignore it; an explicit setting
/// deserves a warning rather than silence.
inline void warn_ignored_hyperparams(const RunConfig& c, bool lambda1_set, bool lambda2_set,
                                     std::ostream& err = std::cerr) {
    const Method m = parse_method(c.method);
    if (lambda1_set && !uses_lambda1(m)) {
        err << "[olora] warning: lambda1 is ignored by method " << c.method << "\n";
    }
    if (lambda2_set && !uses_lambda2(m)) {
        err << "[olora] warning: lambda2 is ignored by method " << c.method << "\n";
    }
}

}  // namespace olora
