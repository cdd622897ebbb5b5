#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "olora/adapter.hpp"

namespace olora {

struct BlockConfig {
    int dim = 32;
    int ff_dim = 64;
    int heads = 1;
    int blocks = 2;
    int output_dim = 8;

    void validate() const {
        if (dim < 1 || ff_dim < 1 || blocks < 1 || output_dim < 1) {
            throw ConfigError("model dimensions must be positive");
        }
        if (heads != 1) throw ConfigError("only single-head attention is supported");
        if (dim % heads != 0) throw ConfigError("model dim must be divisible by heads");
    }
};

struct TransformerBlock {
    LinearLayer wq, wk, wv, wo;  // d x d
    LinearLayer fc1;             // ff x d
    LinearLayer fc2;             // d x ff
};

struct AdaptedWeightRef {
    std::string name;
    LinearLayer* layer;
};

/// Encoder-only block stack with a frozen input embedding and output head.
/// The six per-block matrices carry adapter stacks; embedding and head never
/// do. Copying a ToyModel is a deep copy (used for Mono/Multi and the LwF
/// teacher).
struct ToyModel {
    BlockConfig cfg;
    LinearLayer embed;  // d -> d
    std::vector<TransformerBlock> blocks;
    LinearLayer head;  // d -> output_dim

    std::vector<AdaptedWeightRef> adapted_weights() {
        std::vector<AdaptedWeightRef> out;
        out.reserve(blocks.size() * 6);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "b" + std::to_string(i) + ".";
            out.push_back({p + "wq", &blocks[i].wq});
            out.push_back({p + "wk", &blocks[i].wk});
            out.push_back({p + "wv", &blocks[i].wv});
            out.push_back({p + "wo", &blocks[i].wo});
            out.push_back({p + "fc1", &blocks[i].fc1});
            out.push_back({p + "fc2", &blocks[i].fc2});
        }
        return out;
    }

    std::vector<const LinearLayer*> all_layers() const {
        std::vector<const LinearLayer*> out{&embed};
        for (const auto& b : blocks) {
            out.push_back(&b.wq);
            out.push_back(&b.wk);
            out.push_back(&b.wv);
            out.push_back(&b.wo);
            out.push_back(&b.fc1);
            out.push_back(&b.fc2);
        }
        out.push_back(&head);
        return out;
    }

    std::vector<LinearLayer*> all_layers() {
        std::vector<LinearLayer*> out{&embed};
        for (auto& b : blocks) {
            out.push_back(&b.wq);
            out.push_back(&b.wk);
            out.push_back(&b.wv);
            out.push_back(&b.wo);
            out.push_back(&b.fc1);
            out.push_back(&b.fc2);
        }
        out.push_back(&head);
        return out;
    }

    std::vector<Parameter*> base_params() {
        std::vector<Parameter*> out;
        for (LinearLayer* l : all_layers()) {
            out.push_back(&l->W);
            out.push_back(&l->b);
        }
        return out;
    }
};

namespace detail {

inline LinearLayer make_layer(int in_dim, int out_dim, Rng& rng) {
    LinearLayer l;
    l.W = Parameter(rng.gaussian_matrix(out_dim, in_dim, 1.0 / std::sqrt(in_dim)));
    l.b = Parameter(Matrix(1, out_dim));
    return l;
}

}  // namespace detail

inline ToyModel build_model(const BlockConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;
    Rng rng(mix_seed(seed, 0x6d6f64656cull));
    m.embed = detail::make_layer(cfg.dim, cfg.dim, rng);
    m.blocks.resize(cfg.blocks);
    for (auto& b : m.blocks) {
        b.wq = detail::make_layer(cfg.dim, cfg.dim, rng);
        b.wk = detail::make_layer(cfg.dim, cfg.dim, rng);
        b.wv = detail::make_layer(cfg.dim, cfg.dim, rng);
        b.wo = detail::make_layer(cfg.dim, cfg.dim, rng);
        b.fc1 = detail::make_layer(cfg.dim, cfg.ff_dim, rng);
        b.fc2 = detail::make_layer(cfg.ff_dim, cfg.dim, rng);
    }
    m.head = detail::make_layer(cfg.dim, cfg.output_dim, rng);
    return m;
}

/// Marks base weights trainable (full fine-tuning) or frozen (adapter modes).
/// Embedding and head follow the base weights.
inline void set_base_trainable(ToyModel& m, bool trainable) {
    for (Parameter* p : m.base_params()) p->trainable = trainable;
}

struct ForwardResult {
    std::vector<Var> preds;   // one 1 x output_dim row per example
    std::vector<Var> pooled;  // final hidden (pre-head), one 1 x dim row per example
};

/// Single-head pre-norm-free transformer forward over a batch of token-vector
/// sequences. Every weight application routes through adapted_forward, so the
/// adapter stacks are always honored.
inline ForwardResult model_forward(Tape& t, ToyModel& m, const std::vector<Matrix>& batch) {
    ForwardResult out;
    out.preds.reserve(batch.size());
    out.pooled.reserve(batch.size());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(m.cfg.dim));
    for (const Matrix& x : batch) {
        if (x.cols() != m.cfg.dim) {
            throw ShapeError("model_forward: input is " + x.shape_str() + " but model dim is " +
                             std::to_string(m.cfg.dim));
        }
        Var h = adapted_forward(t, m.embed, t.constant(x));
        for (auto& blk : m.blocks) {
            Var q = adapted_forward(t, blk.wq, h);
            Var k = adapted_forward(t, blk.wk, h);
            Var v = adapted_forward(t, blk.wv, h);
            Var attn = t.row_softmax(t.scale(t.matmul(q, t.transpose(k)), inv_sqrt_d));
            Var ctx = adapted_forward(t, blk.wo, t.matmul(attn, v));
            h = t.add(h, ctx);
            Var ff = adapted_forward(t, blk.fc2, t.relu(adapted_forward(t, blk.fc1, h)));
            h = t.add(h, ff);
        }
        // Mean-pool over positions via a constant row, then the frozen head.
        Matrix pool_row(1, x.rows(), 1.0 / x.rows());
        Var pooled = t.matmul(t.constant(pool_row), h);
        out.pooled.push_back(pooled);
        out.preds.push_back(adapted_forward(t, m.head, pooled));
    }
    return out;
}

/// Mean squared error over batch and output dims.
inline Var task_loss(Tape& t, const std::vector<Var>& preds, const std::vector<Matrix>& targets) {
    if (preds.size() != targets.size() || preds.empty()) {
        throw ShapeError("task_loss: got " + std::to_string(preds.size()) + " predictions and " +
                         std::to_string(targets.size()) + " targets");
    }
    Var sum = t.constant(Matrix(1, 1));
    std::size_t count = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!t.value(preds[i]).same_shape(targets[i])) {
            throw ShapeError("task_loss: prediction " + t.value(preds[i]).shape_str() +
                             " vs target " + targets[i].shape_str());
        }
        sum = t.add(sum, t.frobenius_sq(t.sub(preds[i], t.constant(targets[i]))));
        count += targets[i].size();
    }
    return t.scale(sum, 1.0 / static_cast<double>(count));
}

inline double task_loss_value(const std::vector<Matrix>& preds,
                              const std::vector<Matrix>& targets) {
    if (preds.size() != targets.size() || preds.empty()) {
        throw ShapeError("task_loss: got " + std::to_string(preds.size()) + " predictions and " +
                         std::to_string(targets.size()) + " targets");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!preds[i].same_shape(targets[i])) {
            throw ShapeError("task_loss: prediction " + preds[i].shape_str() + " vs target " +
                             targets[i].shape_str());
        }
        sum += frobenius_sq(sub(preds[i], targets[i]));
        count += targets[i].size();
    }
    return sum / static_cast<double>(count);
}

/// Inference-mode snapshot: every adapter stack folded into a plain weight.
struct InferenceModel {
    BlockConfig cfg;
    Matrix embed_w, embed_b;
    struct Block {
        Matrix q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, f1_w, f1_b, f2_w, f2_b;
    };
    std::vector<Block> blocks;
    Matrix head_w, head_b;
};

inline InferenceModel freeze_for_inference(const ToyModel& m) {
    InferenceModel im;
    im.cfg = m.cfg;
    im.embed_w = effective_weight(m.embed);
    im.embed_b = m.embed.b.value;
    im.blocks.reserve(m.blocks.size());
    for (const auto& b : m.blocks) {
        InferenceModel::Block ib;
        ib.q_w = effective_weight(b.wq);
        ib.q_b = b.wq.b.value;
        ib.k_w = effective_weight(b.wk);
        ib.k_b = b.wk.b.value;
        ib.v_w = effective_weight(b.wv);
        ib.v_b = b.wv.b.value;
        ib.o_w = effective_weight(b.wo);
        ib.o_b = b.wo.b.value;
        ib.f1_w = effective_weight(b.fc1);
        ib.f1_b = b.fc1.b.value;
        ib.f2_w = effective_weight(b.fc2);
        ib.f2_b = b.fc2.b.value;
        im.blocks.push_back(std::move(ib));
    }
    im.head_w = effective_weight(m.head);
    im.head_b = m.head.b.value;
    return im;
}

namespace detail {

inline Matrix apply_linear(const Matrix& w, const Matrix& b, const Matrix& x) {
    return add_row(matmul(x, transpose(w)), b);
}

}  // namespace detail

/// Final 1 x dim hidden state (mean-pooled, pre-head) for one example.
inline Matrix model_pooled(const InferenceModel& im, const Matrix& x) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(im.cfg.dim));
    Matrix h = detail::apply_linear(im.embed_w, im.embed_b, x);
    for (const auto& b : im.blocks) {
        Matrix q = detail::apply_linear(b.q_w, b.q_b, h);
        Matrix k = detail::apply_linear(b.k_w, b.k_b, h);
        Matrix v = detail::apply_linear(b.v_w, b.v_b, h);
        Matrix attn = row_softmax(scale(matmul(q, transpose(k)), inv_sqrt_d));
        Matrix ctx = detail::apply_linear(b.o_w, b.o_b, matmul(attn, v));
        h += ctx;
        Matrix ff = detail::apply_linear(b.f2_w, b.f2_b,
                                         relu(detail::apply_linear(b.f1_w, b.f1_b, h)));
        h += ff;
    }
    Matrix pool_row(1, x.rows(), 1.0 / x.rows());
    return matmul(pool_row, h);
}

/// Deterministic value-only forward through merged weights; one example in,
/// one 1 x output_dim prediction out.
inline Matrix model_infer(const InferenceModel& im, const Matrix& x) {
    return detail::apply_linear(im.head_w, im.head_b, model_pooled(im, x));
}

struct ParamCount {
    long long trainable = 0;
    long long total = 0;
    double fraction = 0.0;
};

/// Exact trainable-scalar count under the current trainable flags, over all
/// scalars in the model including every adapter in every stack.
inline ParamCount trainable_param_count(const ToyModel& m) {
    ParamCount out;
    auto tally = [&out](const Parameter& p) {
        out.total += static_cast<long long>(p.size());
        if (p.trainable) out.trainable += static_cast<long long>(p.size());
    };
    auto tally_adapter = [&](const Adapter& a) {
        if (const auto* l = std::get_if<LoraAdapter>(&a)) {
            tally(l->A);
            tally(l->B);
        } else {
            const auto& ad = std::get<AdaLoraAdapter>(a);
            tally(ad.A);
            tally(ad.lambda);
            tally(ad.B);
        }
    };
    for (const LinearLayer* l : m.all_layers()) {
        tally(l->W);
        tally(l->b);
        for (const Adapter& a : l->stack.frozen) tally_adapter(a);
        if (l->stack.active.has_value()) tally_adapter(*l->stack.active);
    }
    out.fraction = out.total > 0 ? static_cast<double>(out.trainable) / out.total : 0.0;
    return out;
}

}  // namespace olora
