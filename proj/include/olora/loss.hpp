#pragma once

#include <string>
#include <vector>

#include "olora/adapter.hpp"

namespace olora {

enum class LossMode { lora, o_lora, adalora, o_adalora };

inline std::string loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::lora: return "lora";
        case LossMode::o_lora: return "o_lora";
        case LossMode::adalora: return "adalora";
        case LossMode::o_adalora: return "o_adalora";
    }
    return "?";
}

inline bool mode_uses_orth(LossMode m) {
    return m == LossMode::o_lora || m == LossMode::o_adalora;
}

inline bool mode_uses_adalora_reg(LossMode m) {
    return m == LossMode::adalora || m == LossMode::o_adalora;
}

/// Per-step loss decomposition. `total` is the one scalar that gets
/// backpropagated; the terms here are recomputed outside the tape for logging.
struct LossBreakdown {
    double task_loss = 0.0;
    double orth_loss = 0.0;
    double adalora_reg = 0.0;
    double total = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
};

/// ||A_prev^T * A_new||_F^2: zero exactly when every column of A_new is
/// orthogonal to every column of A_prev.
inline double orth_loss_value(const Matrix& a_prev, const Matrix& a_new) {
    if (a_prev.rows() != a_new.rows()) {
        throw ShapeError("orth_loss: row counts differ (" + a_prev.shape_str() + " vs " +
                         a_new.shape_str() + ")");
    }
    return frobenius_sq(matmul(transpose(a_prev), a_new));
}

/// Tape form. a_prev enters as a leaf of a frozen Parameter, so gradients flow
/// to the new A only.
inline Var orth_loss(Tape& t, Parameter& a_prev, Parameter& a_new) {
    if (a_prev.value.rows() != a_new.value.rows()) {
        throw ShapeError("orth_loss: row counts differ (" + a_prev.value.shape_str() + " vs " +
                         a_new.value.shape_str() + ")");
    }
    return t.frobenius_sq(t.matmul(t.transpose(t.leaf(a_prev)), t.leaf(a_new)));
}

/// ||A^T A - I||_F^2 + ||B B^T - I||_F^2 against the r x r identity.
inline double adalora_reg_value(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("adalora_reg: rank dimensions differ (" + a.shape_str() + " vs " +
                         b.shape_str() + ")");
    }
    const Matrix eye = Matrix::identity(a.cols());
    return frobenius_sq(sub(matmul(transpose(a), a), eye)) +
           frobenius_sq(sub(matmul(b, transpose(b)), eye));
}

inline Var adalora_reg(Tape& t, Parameter& a, Parameter& b) {
    if (a.value.cols() != b.value.rows()) {
        throw ShapeError("adalora_reg: rank dimensions differ (" + a.value.shape_str() + " vs " +
                         b.value.shape_str() + ")");
    }
    Var eye = t.constant(Matrix::identity(a.value.cols()));
    Var av = t.leaf(a);
    Var bv = t.leaf(b);
    Var ga = t.frobenius_sq(t.sub(t.matmul(t.transpose(av), av), eye));
    Var gb = t.frobenius_sq(t.sub(t.matmul(bv, t.transpose(bv)), eye));
    return t.add(ga, gb);
}

namespace detail {

inline Adapter& require_active(AdapterStack& s) {
    if (!s.active.has_value()) throw StateError("adapter stack has no active adapter");
    return *s.active;
}

inline const Adapter& require_active(const AdapterStack& s) {
    if (!s.active.has_value()) throw StateError("adapter stack has no active adapter");
    return *s.active;
}

template <typename StackPtr>
inline void check_mode_kinds(const std::vector<StackPtr>& stacks, LossMode mode) {
    for (const AdapterStack* s : stacks) {
        const Adapter& active = require_active(*s);
        const bool is_adalora = std::holds_alternative<AdaLoraAdapter>(active);
        if (mode_uses_adalora_reg(mode) && !is_adalora) {
            throw ConfigError("loss mode " + loss_mode_name(mode) +
                              " requires AdaLoRA active adapters");
        }
        if (!mode_uses_adalora_reg(mode) && is_adalora) {
            throw ConfigError("loss mode " + loss_mode_name(mode) +
                              " requires plain LoRA active adapters");
        }
    }
}

}  // namespace detail

/// Sum over stacks and over each stack's frozen history of
/// ||A_frozen^T A_active||_F^2. Empty histories contribute zero.
inline double total_orth_loss_value(const std::vector<const AdapterStack*>& stacks) {
    double sum = 0.0;
    for (const AdapterStack* s : stacks) {
        const Adapter& active = detail::require_active(*s);
        const Matrix& a_new = adapter_A(active).value;
        for (const Adapter& f : s->frozen) sum += orth_loss_value(adapter_A(f).value, a_new);
    }
    return sum;
}

inline Var total_orth_loss(Tape& t, const std::vector<AdapterStack*>& stacks) {
    Var sum = t.constant(Matrix(1, 1));
    for (AdapterStack* s : stacks) {
        Adapter& active = detail::require_active(*s);
        Parameter& a_new = adapter_A(active);
        for (Adapter& f : s->frozen) sum = t.add(sum, orth_loss(t, adapter_A(f), a_new));
    }
    return sum;
}

/// total = task + lambda1 * orth + lambda2 * adalora_reg, with terms not used
/// by the mode left out of the tape entirely (they are exactly zero).
inline Var combined_loss(Tape& t, Var task, const std::vector<AdapterStack*>& stacks,
                         LossMode mode, double lambda1, double lambda2) {
    detail::check_mode_kinds(stacks, mode);
    Var total = task;
    if (mode_uses_orth(mode)) {
        total = t.add(total, t.scale(total_orth_loss(t, stacks), lambda1));
    }
    if (mode_uses_adalora_reg(mode)) {
        Var reg = t.constant(Matrix(1, 1));
        for (AdapterStack* s : stacks) {
            auto& active = std::get<AdaLoraAdapter>(detail::require_active(*s));
            reg = t.add(reg, adalora_reg(t, active.A, active.B));
        }
        total = t.add(total, t.scale(reg, lambda2));
    }
    return total;
}

/// Value-route recomputation of the decomposition, for logging. Matches the
/// tape route term by term and summation order by summation order.
inline LossBreakdown loss_breakdown(double task, const std::vector<const AdapterStack*>& stacks,
                                    LossMode mode, double lambda1, double lambda2) {
    detail::check_mode_kinds(stacks, mode);
    LossBreakdown out;
    out.task_loss = task;
    out.lambda1 = lambda1;
    out.lambda2 = lambda2;
    if (mode_uses_orth(mode)) {
        out.orth_loss = total_orth_loss_value(stacks);
    }
    if (mode_uses_adalora_reg(mode)) {
        double reg = 0.0;
        for (const AdapterStack* s : stacks) {
            const auto& active = std::get<AdaLoraAdapter>(detail::require_active(*s));
            reg += adalora_reg_value(active.A.value, active.B.value);
        }
        out.adalora_reg = reg;
    }
    out.total = out.task_loss + lambda1 * out.orth_loss + lambda2 * out.adalora_reg;
    return out;
}

}  // namespace olora
