#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "olora/matrix.hpp"

namespace olora {

/// A persistent trainable (or frozen) array: value plus gradient accumulator.
struct Parameter {
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter() = default;

    explicit Parameter(Matrix v, bool trainable_ = true)
        : value(std::move(v)), grad(value.rows(), value.cols()), trainable(trainable_) {}

    void zero_grad() { grad.fill(0.0); }

    std::size_t size() const { return value.size(); }
};

namespace detail {

/// Fault-injection switches for negative-control tests only.
struct TestHooks {
    bool corrupt_matmul_backward = false;
};

inline TestHooks& test_hooks() {
    static TestHooks hooks;
    return hooks;
}

}  // namespace detail

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
};

/// Reverse-mode tape. Records one forward pass; backward() replays it in
/// reverse and accumulates gradients into every trainable Parameter that was
/// brought in through leaf(). Intended lifetime: build, backward, discard.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records a constant; no gradient flows into it.
    Var constant(Matrix v) { return push(std::move(v), nullptr, {}, "constant"); }

    /// Records a parameter leaf. Gradients reaching it are accumulated into
    /// p.grad at the end of backward() iff p.trainable.
    Var leaf(Parameter& p) {
        Var v = push(p.value, nullptr, {}, "leaf");
        nodes_[v.id].param = &p;
        return v;
    }

    Var matmul(Var a, Var b) {
        Matrix out = olora::matmul(value(a), value(b));
        return push(std::move(out),
                    [a, b](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        Matrix ga = olora::matmul(g, olora::transpose(t.value(b)));
                        if (detail::test_hooks().corrupt_matmul_backward) ga *= 1.01;
                        t.accum(a, std::move(ga));
                        t.accum(b, olora::matmul(olora::transpose(t.value(a)), g));
                    },
                    {a, b}, "matmul");
    }

    Var transpose(Var a) {
        return push(olora::transpose(value(a)),
                    [a](Tape& t, int self) { t.accum(a, olora::transpose(t.nodes_[self].grad)); },
                    {a}, "transpose");
    }

    Var add(Var a, Var b) {
        return push(olora::add(value(a), value(b)),
                    [a, b](Tape& t, int self) {
                        t.accum(a, t.nodes_[self].grad);
                        t.accum(b, t.nodes_[self].grad);
                    },
                    {a, b}, "add");
    }

    Var sub(Var a, Var b) {
        return push(olora::sub(value(a), value(b)),
                    [a, b](Tape& t, int self) {
                        t.accum(a, t.nodes_[self].grad);
                        t.accum(b, olora::scale(t.nodes_[self].grad, -1.0));
                    },
                    {a, b}, "sub");
    }

    Var mul(Var a, Var b) {
        return push(olora::mul(value(a), value(b)),
                    [a, b](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        t.accum(a, olora::mul(g, t.value(b)));
                        t.accum(b, olora::mul(g, t.value(a)));
                    },
                    {a, b}, "mul");
    }

    Var scale(Var a, double c) {
        return push(olora::scale(value(a), c),
                    [a, c](Tape& t, int self) { t.accum(a, olora::scale(t.nodes_[self].grad, c)); },
                    {a}, "scale");
    }

    /// Entrywise max(x, 0); backward uses subgradient 0 at 0.
    Var relu(Var a) {
        return push(olora::relu(value(a)),
                    [a](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        const Matrix& x = t.value(a);
                        Matrix ga(x.rows(), x.cols());
                        for (std::size_t i = 0; i < ga.size(); ++i)
                            ga.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
                        t.accum(a, std::move(ga));
                    },
                    {a}, "relu");
    }

    Var row_softmax(Var a) {
        return push(olora::row_softmax(value(a)),
                    [a](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        const Matrix& p = t.nodes_[self].value;
                        Matrix ga(p.rows(), p.cols());
                        for (int i = 0; i < p.rows(); ++i) {
                            double dot = 0.0;
                            for (int j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
                            for (int j = 0; j < p.cols(); ++j)
                                ga(i, j) = p(i, j) * (g(i, j) - dot);
                        }
                        t.accum(a, std::move(ga));
                    },
                    {a}, "row_softmax");
    }

    /// Sum of squared entries; a 1x1 result. Backward gives 2a.
    Var frobenius_sq(Var a) {
        Matrix out(1, 1);
        out(0, 0) = olora::frobenius_sq(value(a));
        return push(std::move(out),
                    [a](Tape& t, int self) {
                        const double g = t.nodes_[self].grad(0, 0);
                        t.accum(a, olora::scale(t.value(a), 2.0 * g));
                    },
                    {a}, "frobenius_sq");
    }

    /// Scales column k of m by row(0, k).
    Var col_scale(Var m, Var row) {
        return push(olora::col_scale(value(m), value(row)),
                    [m, row](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        const Matrix& mv = t.value(m);
                        const Matrix& rv = t.value(row);
                        t.accum(m, olora::col_scale(g, rv));
                        Matrix gr(1, mv.cols());
                        for (int i = 0; i < mv.rows(); ++i)
                            for (int j = 0; j < mv.cols(); ++j) gr(0, j) += g(i, j) * mv(i, j);
                        t.accum(row, std::move(gr));
                    },
                    {m, row}, "col_scale");
    }

    /// Adds a 1xC row to every row of m (bias broadcast).
    Var add_row(Var m, Var row) {
        return push(olora::add_row(value(m), value(row)),
                    [m, row](Tape& t, int self) {
                        const Matrix& g = t.nodes_[self].grad;
                        t.accum(m, g);
                        Matrix gr(1, g.cols());
                        for (int i = 0; i < g.rows(); ++i)
                            for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                        t.accum(row, std::move(gr));
                    },
                    {m, row}, "add_row");
    }

    const Matrix& value(Var v) const { return nodes_[v.id].value; }

    /// Gradient of the last backward() w.r.t. node v (zeros if untouched).
    const Matrix& grad(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seeds dL/dL = 1 and replays all recorded operations in reverse,
    /// accumulating into trainable Parameter grads.
    void backward(Var loss) {
        Node& ln = nodes_[loss.id];
        if (ln.value.rows() != 1 || ln.value.cols() != 1) {
            throw ShapeError("backward: loss must be 1x1, got " + ln.value.shape_str());
        }
        accum(loss, Matrix(1, 1, 1.0));
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.touched) continue;
            if (n.backprop) n.backprop(*this, i);
            if (n.param != nullptr && n.param->trainable) n.param->grad += n.grad;
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool touched = false;
        Parameter* param = nullptr;
        std::function<void(Tape&, int)> backprop;
    };

    Var push(Matrix value, std::function<void(Tape&, int)> backprop, std::initializer_list<Var>,
             const char* op) {
        if (!all_finite(value)) {
            throw NumericError(std::string(op) + ": produced non-finite values");
        }
        Node n;
        n.value = std::move(value);
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accum(Var v, const Matrix& g) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) {
            n.grad = g;
        } else {
            n.grad += g;
        }
        n.touched = true;
    }

    void accum(Var v, Matrix&& g) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) {
            n.grad = std::move(g);
        } else {
            n.grad += g;
        }
        n.touched = true;
    }

    std::vector<Node> nodes_;
};

inline void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace olora
