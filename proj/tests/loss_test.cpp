#include <gtest/gtest.h>

#include <cmath>

#include "olora/gradcheck.hpp"
#include "olora/loss.hpp"

using namespace olora;

namespace {

// Independent oracle: explicit inner-product double loop over column pairs.
double orth_loss_bruteforce(const Matrix& p, const Matrix& q) {
    double sum = 0.0;
    for (int j = 0; j < p.cols(); ++j) {
        for (int k = 0; k < q.cols(); ++k) {
            double dot = 0.0;
            for (int i = 0; i < p.rows(); ++i) dot += p(i, j) * q(i, k);
            sum += dot * dot;
        }
    }
    return sum;
}

Matrix basis_cols(int dim, std::initializer_list<int> cols) {
    Matrix m(dim, static_cast<int>(cols.size()));
    int j = 0;
    for (int c : cols) m(c, j++) = 1.0;
    return m;
}

AdapterStack stack_with(Adapter active, std::vector<Adapter> frozen = {}) {
    AdapterStack s;
    for (auto& f : frozen) {
        set_adapter_trainable(f, false);
        s.frozen.push_back(std::move(f));
    }
    set_adapter_trainable(active, true);
    s.active = std::move(active);
    return s;
}

LoraAdapter lora_with_A(const Matrix& a) {
    LoraAdapter l = init_lora(a.rows(), a.rows(), a.cols(), 0);
    l.A.value = a;
    return l;
}

}  // namespace

TEST(OrthLoss, OrthogonalSubspacesGiveZero) {
    const Matrix p = basis_cols(3, {0, 1});
    const Matrix q = basis_cols(3, {2});
    EXPECT_DOUBLE_EQ(orth_loss_value(p, q), 0.0);
}

TEST(OrthLoss, IdenticalBasisGivesColumnCount) {
    const Matrix p = basis_cols(3, {0, 1});
    EXPECT_DOUBLE_EQ(orth_loss_value(p, p), 2.0);
}

TEST(OrthLoss, MatchesCompositionAndBruteForce) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(mix_seed(s, 5));
        const Matrix p = rng.gaussian_matrix(4, 2, 1.0);
        const Matrix q = rng.gaussian_matrix(4, 2, 1.0);
        const double composed = frobenius_sq(matmul(transpose(p), q));
        EXPECT_DOUBLE_EQ(orth_loss_value(p, q), composed);
        EXPECT_NEAR(orth_loss_value(p, q), orth_loss_bruteforce(p, q), 1e-12);
    }
}

TEST(OrthLoss, SymmetricInValue) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(mix_seed(s, 6));
        const Matrix p = rng.gaussian_matrix(5, 3, 1.0);
        const Matrix q = rng.gaussian_matrix(5, 2, 1.0);
        EXPECT_NEAR(orth_loss_value(p, q), orth_loss_value(q, p), 1e-12);
        EXPECT_GE(orth_loss_value(p, q), 0.0);
    }
}

TEST(OrthLoss, RowCountMismatch) {
    EXPECT_THROW(orth_loss_value(Matrix(3, 2), Matrix(4, 2)), ShapeError);
}

TEST(TotalOrthLoss, FirstTaskIsZero) {
    AdapterStack s = stack_with(init_lora(6, 6, 2, 1));
    std::vector<const AdapterStack*> stacks{&s};
    EXPECT_DOUBLE_EQ(total_orth_loss_value(stacks), 0.0);
}

TEST(TotalOrthLoss, SingleFrozenEqualsSingleCall) {
    Rng rng(9);
    LoraAdapter frozen = init_lora(6, 6, 2, 2);
    LoraAdapter active = init_lora(6, 6, 3, 3);
    AdapterStack s = stack_with(active, {frozen});
    std::vector<const AdapterStack*> stacks{&s};
    EXPECT_DOUBLE_EQ(total_orth_loss_value(stacks),
                     orth_loss_value(frozen.A.value, active.A.value));
}

TEST(TotalOrthLoss, MatchesBruteForceDoubleSum) {
    Rng rng(11);
    std::vector<AdapterStack> stacks;
    double expected = 0.0;
    for (int w = 0; w < 2; ++w) {
        LoraAdapter active = init_lora(5, 5, 2, mix_seed(w, 100));
        rng.fill_gaussian(active.A.value, 1.0);
        std::vector<Adapter> frozen;
        for (int i = 0; i < 2; ++i) {
            LoraAdapter f = init_lora(5, 5, 2, mix_seed(w, 200 + i));
            rng.fill_gaussian(f.A.value, 1.0);
            expected += orth_loss_bruteforce(f.A.value, active.A.value);
            frozen.push_back(f);
        }
        stacks.push_back(stack_with(active, frozen));
    }
    std::vector<const AdapterStack*> ptrs{&stacks[0], &stacks[1]};
    EXPECT_NEAR(total_orth_loss_value(ptrs), expected, 1e-12);
}

TEST(TotalOrthLoss, MissingActiveAdapterThrows) {
    AdapterStack s;
    s.frozen.push_back(init_lora(4, 4, 2, 0));
    std::vector<const AdapterStack*> stacks{&s};
    EXPECT_THROW(total_orth_loss_value(stacks), StateError);
}

TEST(TotalOrthLoss, FrozenGradsStayZero) {
    LoraAdapter frozen = init_lora(6, 6, 2, 21);
    Rng rng(22);
    rng.fill_gaussian(frozen.A.value, 1.0);
    LoraAdapter active = init_lora(6, 6, 2, 23);
    rng.fill_gaussian(active.A.value, 1.0);
    AdapterStack s = stack_with(active, {frozen});

    Tape t;
    std::vector<AdapterStack*> stacks{&s};
    t.backward(total_orth_loss(t, stacks));

    EXPECT_EQ(adapter_A(s.frozen[0]).grad, Matrix(6, 2));
    EXPECT_NE(adapter_A(*s.active).grad, Matrix(6, 2));
}

TEST(AdaloraReg, OrthonormalGivesZero) {
    const Matrix a = basis_cols(4, {0, 1});          // orthonormal columns
    const Matrix b = transpose(basis_cols(4, {2, 3}));  // orthonormal rows
    EXPECT_NEAR(adalora_reg_value(a, b), 0.0, 1e-15);
}

TEST(AdaloraReg, ZerosGiveTwoIdentityNorms) {
    EXPECT_DOUBLE_EQ(adalora_reg_value(Matrix(5, 2), Matrix(2, 7)), 4.0);
}

TEST(AdaloraReg, HandGramValue) {
    const Matrix a = scale(basis_cols(3, {0, 1}), 2.0);  // 3x2, columns 2*e1, 2*e2
    const Matrix b = transpose(basis_cols(3, {0, 1}));   // rows e1^T, e2^T
    EXPECT_DOUBLE_EQ(adalora_reg_value(a, b), 18.0);
}

TEST(AdaloraReg, RankMismatchThrows) {
    EXPECT_THROW(adalora_reg_value(Matrix(4, 2), Matrix(3, 4)), ShapeError);
}

TEST(CombinedLoss, LoraModeIsTaskOnly) {
    AdapterStack s = stack_with(init_lora(6, 6, 2, 31));
    std::vector<const AdapterStack*> stacks{&s};
    const LossBreakdown bd = loss_breakdown(1.25, stacks, LossMode::lora, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(bd.total, 1.25);
    EXPECT_DOUBLE_EQ(bd.orth_loss, 0.0);
    EXPECT_DOUBLE_EQ(bd.adalora_reg, 0.0);
}

TEST(CombinedLoss, OLoraArithmetic) {
    // Engineered so the orthogonality term is 0.4: lambda1 = 0.5 makes the
    // total 1.0 + 0.5 * 0.4 = 1.2.
    LoraAdapter frozen = lora_with_A(basis_cols(3, {0}));
    LoraAdapter active = lora_with_A(scale(basis_cols(3, {0}), std::sqrt(0.4)));
    AdapterStack s = stack_with(active, {frozen});
    std::vector<const AdapterStack*> stacks{&s};
    const LossBreakdown bd = loss_breakdown(1.0, stacks, LossMode::o_lora, 0.5, 0.5);
    EXPECT_NEAR(bd.orth_loss, 0.4, 1e-12);
    EXPECT_NEAR(bd.total, 1.2, 1e-12);
    EXPECT_DOUBLE_EQ(bd.adalora_reg, 0.0);
}

TEST(CombinedLoss, OAdaloraWithoutFrozenHasNoOrthTerm) {
    AdapterStack s = stack_with(init_adalora(6, 6, 3, 33));
    std::vector<const AdapterStack*> stacks{&s};
    const LossBreakdown bd = loss_breakdown(2.0, stacks, LossMode::o_adalora, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(bd.orth_loss, 0.0);
    EXPECT_DOUBLE_EQ(bd.total, 2.0 + 0.5 * bd.adalora_reg);
}

TEST(CombinedLoss, BreakdownIdentityHolds) {
    Rng rng(35);
    AdaLoraAdapter active = init_adalora(6, 6, 3, 36);
    rng.fill_gaussian(active.lambda.value, 1.0);
    LoraAdapter frozen = init_lora(6, 6, 2, 37);
    rng.fill_gaussian(frozen.A.value, 1.0);
    AdapterStack s = stack_with(active, {frozen});
    std::vector<const AdapterStack*> stacks{&s};
    const LossBreakdown bd = loss_breakdown(0.7, stacks, LossMode::o_adalora, 0.3, 0.8);
    EXPECT_NEAR(bd.total, bd.task_loss + bd.lambda1 * bd.orth_loss + bd.lambda2 * bd.adalora_reg,
                1e-12);
    EXPECT_GT(bd.orth_loss, 0.0);
    EXPECT_GT(bd.adalora_reg, 0.0);
}

TEST(CombinedLoss, ModeKindMismatchThrows) {
    AdapterStack lora_stack = stack_with(init_lora(6, 6, 2, 41));
    AdapterStack ada_stack = stack_with(init_adalora(6, 6, 2, 42));
    std::vector<const AdapterStack*> loras{&lora_stack};
    std::vector<const AdapterStack*> adas{&ada_stack};
    EXPECT_THROW(loss_breakdown(1.0, loras, LossMode::o_adalora, 0.5, 0.5), ConfigError);
    EXPECT_THROW(loss_breakdown(1.0, adas, LossMode::o_lora, 0.5, 0.5), ConfigError);
}

TEST(CombinedLoss, TapeAndBreakdownAgree) {
    Rng rng(51);
    AdaLoraAdapter active = init_adalora(5, 5, 2, 52);
    rng.fill_gaussian(active.lambda.value, 0.7);
    AdaLoraAdapter frozen = init_adalora(5, 5, 2, 53);
    AdapterStack s = stack_with(active, {Adapter{frozen}});
    std::vector<AdapterStack*> stacks{&s};
    std::vector<const AdapterStack*> cstacks{&s};

    Tape t;
    Var task = t.constant(Matrix(1, 1, 0.9));
    Var total = combined_loss(t, task, stacks, LossMode::o_adalora, 0.5, 0.5);
    const LossBreakdown bd = loss_breakdown(0.9, cstacks, LossMode::o_adalora, 0.5, 0.5);
    EXPECT_NEAR(t.value(total)(0, 0), bd.total, 1e-12);
}

TEST(CombinedLoss, GradientCheckPerMode) {
    // Stack-level gradient check for each mode; the full-model variant lives in
    // the model tests.
    for (LossMode mode :
         {LossMode::lora, LossMode::o_lora, LossMode::adalora, LossMode::o_adalora}) {
        const bool ada = mode_uses_adalora_reg(mode);
        Rng rng(61);
        Adapter active = ada ? Adapter{init_adalora(5, 5, 2, 62)} : Adapter{init_lora(5, 5, 2, 62)};
        if (ada) {
            auto& aa = std::get<AdaLoraAdapter>(active);
            rng.fill_gaussian(aa.lambda.value, 0.7);
            rng.fill_gaussian(aa.B.value, 0.5);
            aa.mask[1] = 0;
        } else {
            auto& la = std::get<LoraAdapter>(active);
            rng.fill_gaussian(la.B.value, 0.5);
        }
        LoraAdapter frozen = init_lora(5, 5, 2, 63);
        rng.fill_gaussian(frozen.A.value, 0.8);

        LinearLayer layer;
        layer.W = Parameter(rng.gaussian_matrix(5, 5, 0.4), /*trainable=*/false);
        layer.b = Parameter(Matrix(1, 5), /*trainable=*/false);
        layer.stack = stack_with(active, {Adapter{frozen}});
        std::vector<AdapterStack*> stacks{&layer.stack};
        const Matrix x = rng.gaussian_matrix(2, 5, 1.0);

        std::vector<Parameter*> params;
        std::visit([&](auto& a) { params.push_back(&a.A); }, *layer.stack.active);
        if (ada) {
            auto& aa = std::get<AdaLoraAdapter>(*layer.stack.active);
            params.push_back(&aa.lambda);
            params.push_back(&aa.B);
        } else {
            params.push_back(&std::get<LoraAdapter>(*layer.stack.active).B);
        }

        auto f = [&](bool record) {
            Tape t;
            Var y = adapted_forward(t, layer, t.constant(x));
            Var task = t.frobenius_sq(y);
            Var total = combined_loss(t, task, stacks, mode, 0.5, 0.5);
            if (record) t.backward(total);
            return t.value(total)(0, 0);
        };
        EXPECT_LT(finite_diff_check(f, params, 1e-6), 1e-4) << loss_mode_name(mode);
    }
}
