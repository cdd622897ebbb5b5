#pragma once

#include <optional>
#include <string>
#include <vector>

#include "olora/gradcheck.hpp"
#include "olora/loss.hpp"
#include "olora/model.hpp"

namespace olora {

struct CheckCase {
    std::string name;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    bool skipped = false;

    bool passed() const { return skipped || max_rel_error < threshold; }
};

struct GradCheckOptions {
    std::optional<LossMode> mode_filter;  // when set, other loss modes are reported as skipped
    double h = 1e-6;
    double op_threshold = 1e-5;
    double model_threshold = 1e-4;
};

/// A d=8 single-block model with one frozen and one active adapter per adapted
/// weight, randomized so every loss term and every backward rule is exercised.
struct GradCheckScenario {
    ToyModel model;
    std::vector<AdapterStack*> stacks;
    std::vector<Parameter*> trainable;
    std::vector<Matrix> batch;
    std::vector<Matrix> targets;
    LossMode mode;
    double lambda1 = 0.5;
    double lambda2 = 0.5;

    GradCheckScenario(GradCheckScenario&&) = default;
    GradCheckScenario(const GradCheckScenario&) = delete;
    GradCheckScenario& operator=(const GradCheckScenario&) = delete;
    GradCheckScenario() = default;

    double objective(bool record) {
        Tape t;
        ForwardResult fwd = model_forward(t, model, batch);
        Var task = task_loss(t, fwd.preds, targets);
        Var total = combined_loss(t, task, stacks, mode, lambda1, lambda2);
        if (record) t.backward(total);
        return t.value(total)(0, 0);
    }
};

inline GradCheckScenario make_gradcheck_scenario(LossMode mode, std::uint64_t seed) {
    auto scenario = GradCheckScenario();
    BlockConfig cfg;
    cfg.dim = 8;
    cfg.ff_dim = 12;
    cfg.blocks = 1;
    cfg.output_dim = 4;
    scenario.model = build_model(cfg, mix_seed(seed, 1));
    set_base_trainable(scenario.model, false);
    scenario.mode = mode;

    const bool ada = mode_uses_adalora_reg(mode);
    Rng rng(mix_seed(seed, 2));
    int widx = 0;
    for (auto& w : scenario.model.adapted_weights()) {
        const int d1 = w.layer->in_dim();
        const int d2 = w.layer->out_dim();
        // One frozen LoRA adapter so the orthogonality term is live.
        LoraAdapter frozen = init_lora(d1, d2, 2, mix_seed(seed, 100 + widx));
        rng.fill_gaussian(frozen.A.value, 0.4);
        rng.fill_gaussian(frozen.B.value, 0.2);
        freeze_and_extend(w.layer->stack, frozen);

        if (ada) {
            AdaLoraAdapter active = init_adalora(d1, d2, 3, mix_seed(seed, 200 + widx));
            rng.fill_gaussian(active.A.value, 0.3);
            rng.fill_gaussian(active.B.value, 0.3);
            rng.fill_gaussian(active.lambda.value, 0.3);
            active.mask[1] = 0;  // exercise a masked triplet in backward
            freeze_and_extend(w.layer->stack, active);
            auto& inst = std::get<AdaLoraAdapter>(*w.layer->stack.active);
            scenario.trainable.push_back(&inst.A);
            scenario.trainable.push_back(&inst.lambda);
            scenario.trainable.push_back(&inst.B);
        } else {
            LoraAdapter active = init_lora(d1, d2, 3, mix_seed(seed, 200 + widx));
            rng.fill_gaussian(active.A.value, 0.3);
            rng.fill_gaussian(active.B.value, 0.3);
            freeze_and_extend(w.layer->stack, active);
            auto& inst = std::get<LoraAdapter>(*w.layer->stack.active);
            scenario.trainable.push_back(&inst.A);
            scenario.trainable.push_back(&inst.B);
        }
        scenario.stacks.push_back(&w.layer->stack);
        ++widx;
    }

    for (int i = 0; i < 2; ++i) {
        scenario.batch.push_back(rng.gaussian_matrix(3, cfg.dim, 1.0));
        scenario.targets.push_back(rng.gaussian_matrix(1, cfg.output_dim, 1.0));
    }
    return scenario;
}

/// The full gradient-check matrix: one case per primitive operation and one
/// per loss mode on the single-block model.
inline std::vector<CheckCase> run_gradcheck_suite(const GradCheckOptions& opt = {}) {
    std::vector<CheckCase> out;

    Rng rng(12345);
    const Matrix c34 = rng.gaussian_matrix(3, 4, 1.0);
    const Matrix c33 = rng.gaussian_matrix(3, 3, 1.0);
    const Matrix c43 = rng.gaussian_matrix(4, 3, 1.0);
    Parameter a(rng.gaussian_matrix(3, 4, 1.0));
    Parameter b(rng.gaussian_matrix(3, 4, 1.0));
    Parameter w(rng.gaussian_matrix(4, 3, 1.0));
    Parameter row(rng.gaussian_matrix(1, 4, 1.0));

    struct OpCase {
        const char* name;
        std::function<Var(Tape&)> build;
        std::vector<Parameter*> params;
    };
    const std::vector<OpCase> ops = {
        {"op_matmul",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.matmul(t.leaf(a), t.leaf(w)), t.constant(c33))); },
         {&a, &w}},
        {"op_transpose",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.transpose(t.leaf(a)), t.constant(c43))); },
         {&a}},
        {"op_add",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.add(t.leaf(a), t.leaf(b)), t.constant(c34))); },
         {&a, &b}},
        {"op_sub",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.sub(t.leaf(a), t.leaf(b)), t.constant(c34))); },
         {&a, &b}},
        {"op_mul",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.mul(t.leaf(a), t.leaf(b)), t.constant(c34))); },
         {&a, &b}},
        {"op_scale",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.scale(t.leaf(a), 0.7), t.constant(c34))); },
         {&a}},
        {"op_relu",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.relu(t.leaf(a)), t.constant(c34))); },
         {&a}},
        {"op_row_softmax",
         [&](Tape& t) { return t.frobenius_sq(t.mul(t.row_softmax(t.leaf(a)), t.constant(c34))); },
         {&a}},
        {"op_col_scale",
         [&](Tape& t) {
             return t.frobenius_sq(t.mul(t.col_scale(t.leaf(a), t.leaf(row)), t.constant(c34)));
         },
         {&a, &row}},
        {"op_add_row",
         [&](Tape& t) {
             return t.frobenius_sq(t.mul(t.add_row(t.leaf(a), t.leaf(row)), t.constant(c34)));
         },
         {&a, &row}},
        {"op_frobenius_sq", [&](Tape& t) { return t.frobenius_sq(t.leaf(a)); }, {&a}},
    };
    for (const auto& c : ops) {
        CheckCase cc;
        cc.name = c.name;
        cc.threshold = opt.op_threshold;
        auto f = [&](bool record) {
            Tape t;
            Var loss = c.build(t);
            if (record) t.backward(loss);
            return t.value(loss)(0, 0);
        };
        cc.max_rel_error = finite_diff_check(f, c.params, opt.h);
        out.push_back(std::move(cc));
    }

    for (LossMode mode :
         {LossMode::lora, LossMode::o_lora, LossMode::adalora, LossMode::o_adalora}) {
        CheckCase cc;
        cc.name = "objective_" + loss_mode_name(mode);
        cc.threshold = opt.model_threshold;
        if (opt.mode_filter.has_value() && *opt.mode_filter != mode) {
            cc.skipped = true;
            out.push_back(std::move(cc));
            continue;
        }
        GradCheckScenario sc = make_gradcheck_scenario(mode, 0);
        cc.max_rel_error =
            finite_diff_check([&sc](bool record) { return sc.objective(record); }, sc.trainable,
                              opt.h);
        out.push_back(std::move(cc));
    }
    return out;
}

}  // namespace olora
