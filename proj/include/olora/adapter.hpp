#pragma once

#include <cstdint>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "olora/rng.hpp"
#include "olora/tape.hpp"

namespace olora {

/// Plain low-rank increment dW = A * B.
struct LoraAdapter {
    Parameter A;  // d1 x r
    Parameter B;  // r x d2
    int rank = 0;

    int d1() const { return A.value.rows(); }
    int d2() const { return B.value.cols(); }
};

/// SVD-style increment dW = A * diag(lambda) * B with a per-singular-value
/// activity mask. Masked entries contribute exactly zero in every forward.
struct AdaLoraAdapter {
    Parameter A;       // d1 x r
    Parameter lambda;  // 1 x r, the diagonal
    Parameter B;       // r x d2
    std::vector<std::uint8_t> mask;  // 1 = singular value active
    int rank = 0;

    int d1() const { return A.value.rows(); }
    int d2() const { return B.value.cols(); }

    int active_rank() const {
        int n = 0;
        for (auto m : mask) n += m ? 1 : 0;
        return n;
    }

    /// Mask as a 1xr row of 0/1, for the forward-time lambda gating.
    Matrix mask_row() const {
        Matrix m(1, rank);
        for (int k = 0; k < rank; ++k) m(0, k) = mask[k] ? 1.0 : 0.0;
        return m;
    }
};

using Adapter = std::variant<LoraAdapter, AdaLoraAdapter>;

inline int adapter_d1(const Adapter& a) {
    return std::visit([](const auto& x) { return x.d1(); }, a);
}

inline int adapter_d2(const Adapter& a) {
    return std::visit([](const auto& x) { return x.d2(); }, a);
}

inline int adapter_rank(const Adapter& a) {
    return std::visit([](const auto& x) { return x.rank; }, a);
}

/// The A factor spans the adapter's update subspace; both kinds expose it
/// uniformly for the cross-task orthogonality constraint.
inline const Parameter& adapter_A(const Adapter& a) {
    if (const auto* l = std::get_if<LoraAdapter>(&a)) return l->A;
    return std::get<AdaLoraAdapter>(a).A;
}

inline Parameter& adapter_A(Adapter& a) {
    if (auto* l = std::get_if<LoraAdapter>(&a)) return l->A;
    return std::get<AdaLoraAdapter>(a).A;
}

inline void set_adapter_trainable(Adapter& a, bool trainable) {
    if (auto* l = std::get_if<LoraAdapter>(&a)) {
        l->A.trainable = trainable;
        l->B.trainable = trainable;
    } else {
        auto& ad = std::get<AdaLoraAdapter>(a);
        ad.A.trainable = trainable;
        ad.lambda.trainable = trainable;
        ad.B.trainable = trainable;
    }
}

inline bool adapter_trainable(const Adapter& a) { return adapter_A(a).trainable; }

inline long long adapter_scalar_count(const Adapter& a) {
    if (const auto* l = std::get_if<LoraAdapter>(&a)) {
        return static_cast<long long>(l->A.size() + l->B.size());
    }
    const auto& ad = std::get<AdaLoraAdapter>(a);
    return static_cast<long long>(ad.A.size() + ad.lambda.size() + ad.B.size());
}

/// Ordered per-weight adapter history: frozen past-task adapters plus at most
/// one trainable active adapter.
struct AdapterStack {
    std::vector<Adapter> frozen;
    std::optional<Adapter> active;

    bool empty() const { return frozen.empty() && !active.has_value(); }
};

/// y = x * W^T + b with an attached adapter stack. W is out_dim x in_dim.
struct LinearLayer {
    Parameter W;  // d2 x d1
    Parameter b;  // 1 x d2
    AdapterStack stack;

    int in_dim() const { return W.value.cols(); }
    int out_dim() const { return W.value.rows(); }
};

namespace detail {

inline void check_rank(int d1, int d2, int r) {
    if (r < 1) throw RankError("adapter rank must be >= 1, got " + std::to_string(r));
    const int m = std::min(d1, d2);
    if (r > m) {
        throw RankError("adapter rank " + std::to_string(r) + " exceeds min(d1, d2) = " +
                        std::to_string(m));
    }
    if (2 * r > m) {
        static std::mutex mu;
        static std::set<std::pair<int, int>> warned;
        std::lock_guard<std::mutex> lock(mu);
        if (warned.insert({r, m}).second) {
            std::cerr << "[olora] warning: rank " << r << " is not small relative to min(d1, d2) = "
                      << m << "; the increment is close to full rank\n";
        }
    }
}

inline constexpr double kAdapterInitStd = 0.02;

}  // namespace detail

/// A ~ N(0, 0.02^2), B = 0, so the increment starts exactly at zero and the
/// adapted model equals the base model at step 0.
inline LoraAdapter init_lora(int d1, int d2, int r, std::uint64_t seed) {
    detail::check_rank(d1, d2, r);
    Rng rng(seed);
    LoraAdapter a;
    a.A = Parameter(rng.gaussian_matrix(d1, r, detail::kAdapterInitStd));
    a.B = Parameter(Matrix(r, d2));
    a.rank = r;
    return a;
}

/// A, B ~ N(0, 0.02^2), lambda = 0, mask all-active: zero increment at step 0.
inline AdaLoraAdapter init_adalora(int d1, int d2, int r, std::uint64_t seed) {
    detail::check_rank(d1, d2, r);
    Rng rng(seed);
    AdaLoraAdapter a;
    a.A = Parameter(rng.gaussian_matrix(d1, r, detail::kAdapterInitStd));
    a.B = Parameter(rng.gaussian_matrix(r, d2, detail::kAdapterInitStd));
    a.lambda = Parameter(Matrix(1, r));
    a.mask.assign(static_cast<std::size_t>(r), 1);
    a.rank = r;
    return a;
}

/// The materialized d1 x d2 increment. The AdaLoRA variant applies the mask
/// before the product, so masked triplets contribute nothing.
inline Matrix delta_weight(const Adapter& a) {
    if (const auto* l = std::get_if<LoraAdapter>(&a)) {
        return matmul(l->A.value, l->B.value);
    }
    const auto& ad = std::get<AdaLoraAdapter>(a);
    const Matrix lam_eff = mul(ad.lambda.value, ad.mask_row());
    return matmul(col_scale(ad.A.value, lam_eff), ad.B.value);
}

namespace detail {

/// Low-rank contribution x * dW without materializing dW: (x*A)*B, with the
/// masked diagonal in between for the SVD form.
inline Var adapter_contribution(Tape& t, Adapter& a, Var x) {
    if (auto* l = std::get_if<LoraAdapter>(&a)) {
        return t.matmul(t.matmul(x, t.leaf(l->A)), t.leaf(l->B));
    }
    auto& ad = std::get<AdaLoraAdapter>(a);
    Var lam_eff = t.mul(t.leaf(ad.lambda), t.constant(ad.mask_row()));
    Var xa = t.matmul(x, t.leaf(ad.A));
    return t.matmul(t.col_scale(xa, lam_eff), t.leaf(ad.B));
}

}  // namespace detail

/// x * (W + sum dW)^T + b, evaluated as the base product plus one low-rank
/// chain per adapter. Base output comes first so a zero-increment stack
/// reproduces the plain layer bit for bit.
inline Var adapted_forward(Tape& t, LinearLayer& layer, Var x) {
    if (t.value(x).cols() != layer.in_dim()) {
        throw ShapeError("adapted_forward: input is " + t.value(x).shape_str() +
                         " but layer expects " + std::to_string(layer.in_dim()) + " columns");
    }
    Var y = t.add_row(t.matmul(x, t.transpose(t.leaf(layer.W))), t.leaf(layer.b));
    for (Adapter& a : layer.stack.frozen) {
        y = t.add(y, detail::adapter_contribution(t, a, x));
    }
    if (layer.stack.active.has_value()) {
        y = t.add(y, detail::adapter_contribution(t, *layer.stack.active, x));
    }
    return y;
}

/// Effective weight W + sum dW^T, in the layer's own (out x in) orientation.
inline Matrix effective_weight(const LinearLayer& layer) {
    Matrix eff = layer.W.value;
    for (const Adapter& a : layer.stack.frozen) eff += transpose(delta_weight(a));
    if (layer.stack.active.has_value()) eff += transpose(delta_weight(*layer.stack.active));
    return eff;
}

/// Returns the effective weight; with commit=true it is also stored into W and
/// the stack is cleared (folding the adapters into the base).
inline Matrix merge_stack(LinearLayer& layer, bool commit = false) {
    Matrix eff = effective_weight(layer);
    if (commit) {
        layer.W.value = eff;
        layer.W.zero_grad();
        layer.stack.frozen.clear();
        layer.stack.active.reset();
    }
    return eff;
}

/// Demotes the current active adapter (if any) to the frozen history with
/// trainable=false, then installs the new adapter as active.
inline void freeze_and_extend(AdapterStack& stack, Adapter new_adapter) {
    if (!stack.empty()) {
        const Adapter& ref = stack.active.has_value() ? *stack.active : stack.frozen.front();
        if (adapter_d1(ref) != adapter_d1(new_adapter) ||
            adapter_d2(ref) != adapter_d2(new_adapter)) {
            throw ShapeError("freeze_and_extend: adapter is " +
                             std::to_string(adapter_d1(new_adapter)) + "x" +
                             std::to_string(adapter_d2(new_adapter)) + " but stack holds " +
                             std::to_string(adapter_d1(ref)) + "x" + std::to_string(adapter_d2(ref)));
        }
    }
    if (stack.active.has_value()) {
        set_adapter_trainable(*stack.active, false);
        stack.frozen.push_back(std::move(*stack.active));
    }
    set_adapter_trainable(new_adapter, true);
    stack.active = std::move(new_adapter);
}

/// Plain inference through the merged effective weight (no tape, no mutation).
inline Matrix merged_linear(const LinearLayer& layer, const Matrix& x) {
    return add_row(matmul(x, transpose(effective_weight(layer))), layer.b.value);
}

}  // namespace olora
