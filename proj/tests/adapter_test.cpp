#include <gtest/gtest.h>

#include "olora/adapter.hpp"
#include "olora/gradcheck.hpp"

using namespace olora;

namespace {

LinearLayer make_random_layer(int in_dim, int out_dim, std::uint64_t seed) {
    Rng rng(seed);
    LinearLayer l;
    l.W = Parameter(rng.gaussian_matrix(out_dim, in_dim, 0.5));
    l.b = Parameter(rng.gaussian_matrix(1, out_dim, 0.5));
    return l;
}

Adapter random_adapter(int d1, int d2, int r, std::uint64_t seed, bool adalora) {
    Rng rng(mix_seed(seed, adalora ? 2 : 1));
    if (!adalora) {
        LoraAdapter a = init_lora(d1, d2, r, seed);
        rng.fill_gaussian(a.B.value, 0.3);  // make the increment nonzero
        return a;
    }
    AdaLoraAdapter a = init_adalora(d1, d2, r, seed);
    rng.fill_gaussian(a.lambda.value, 0.5);
    if (r > 1) a.mask[0] = 0;  // exercise a masked triplet
    return a;
}

}  // namespace

TEST(InitLora, ZeroIncrementStart) {
    for (auto [d1, d2, r] : {std::tuple{8, 8, 4}, {6, 10, 3}, {10, 6, 2}}) {
        LoraAdapter a = init_lora(d1, d2, r, 123);
        EXPECT_EQ(delta_weight(a), Matrix(d1, d2));
    }
}

TEST(InitLora, SeedDeterminism) {
    LoraAdapter a = init_lora(8, 8, 4, 0);
    LoraAdapter b = init_lora(8, 8, 4, 0);
    LoraAdapter c = init_lora(8, 8, 4, 1);
    EXPECT_EQ(a.A.value, b.A.value);
    EXPECT_NE(a.A.value, c.A.value);
}

TEST(InitLora, RankValidation) {
    EXPECT_THROW(init_lora(4, 8, 5, 0), RankError);
    EXPECT_THROW(init_lora(4, 8, 0, 0), RankError);
    EXPECT_NO_THROW(init_lora(4, 8, 4, 0));
}

TEST(InitAdalora, ZeroIncrementAndFullMask) {
    AdaLoraAdapter a = init_adalora(8, 8, 4, 7);
    EXPECT_EQ(delta_weight(Adapter{a}), Matrix(8, 8));
    EXPECT_EQ(a.active_rank(), 4);
}

TEST(InitAdalora, LambdaLengthMatchesRank) {
    AdaLoraAdapter a = init_adalora(32, 32, 12, 0);
    EXPECT_EQ(a.lambda.value.cols(), 12);
    EXPECT_EQ(a.lambda.value.rows(), 1);
}

TEST(DeltaWeight, LoraHandValue) {
    LoraAdapter a = init_lora(2, 2, 1, 0);
    a.A.value = Matrix::from_rows({{1}, {0}});
    a.B.value = Matrix::from_rows({{0, 2}});
    EXPECT_EQ(delta_weight(Adapter{a}), Matrix::from_rows({{0, 2}, {0, 0}}));
}

TEST(DeltaWeight, AdaloraHandValue) {
    AdaLoraAdapter a = init_adalora(2, 2, 2, 0);
    a.A.value = Matrix::identity(2);
    a.B.value = Matrix::identity(2);
    a.lambda.value = Matrix::from_rows({{1, 0}});
    EXPECT_EQ(delta_weight(Adapter{a}), Matrix::from_rows({{1, 0}, {0, 0}}));
}

TEST(DeltaWeight, AllFalseMaskIsZero) {
    AdaLoraAdapter a = init_adalora(4, 6, 3, 5);
    Rng rng(9);
    rng.fill_gaussian(a.lambda.value, 1.0);
    a.mask.assign(3, 0);
    EXPECT_EQ(delta_weight(Adapter{a}), Matrix(4, 6));
}

TEST(AdaptedForward, EmptyStackEqualsBase) {
    LinearLayer l = make_random_layer(4, 3, 11);
    Rng rng(12);
    const Matrix x = rng.gaussian_matrix(5, 4, 1.0);
    Tape t;
    Var y = adapted_forward(t, l, t.constant(x));
    EXPECT_EQ(t.value(y), add_row(matmul(x, transpose(l.W.value)), l.b.value));
}

TEST(AdaptedForward, FreshAdapterIsBitIdenticalToBase) {
    LinearLayer l = make_random_layer(8, 8, 21);
    Rng rng(22);
    const Matrix x = rng.gaussian_matrix(3, 8, 1.0);
    Matrix base;
    {
        Tape t;
        base = t.value(adapted_forward(t, l, t.constant(x)));
    }
    freeze_and_extend(l.stack, init_lora(8, 8, 4, 1));
    {
        Tape t;
        EXPECT_EQ(t.value(adapted_forward(t, l, t.constant(x))), base);
    }
    freeze_and_extend(l.stack, init_adalora(8, 8, 4, 2));
    {
        Tape t;
        EXPECT_EQ(t.value(adapted_forward(t, l, t.constant(x))), base);
    }
}

TEST(AdaptedForward, HandValue) {
    LinearLayer l;
    l.W = Parameter(Matrix::identity(2));
    l.b = Parameter(Matrix(1, 2));
    LoraAdapter a = init_lora(2, 2, 1, 0);
    a.A.value = Matrix::from_rows({{1}, {0}});
    a.B.value = Matrix::from_rows({{0, 2}});
    freeze_and_extend(l.stack, a);
    Tape t;
    Var y = adapted_forward(t, l, t.constant(Matrix::from_rows({{1, 0}})));
    EXPECT_EQ(t.value(y), Matrix::from_rows({{1, 2}}));
}

TEST(AdaptedForward, ShapeError) {
    LinearLayer l = make_random_layer(4, 3, 31);
    Tape t;
    EXPECT_THROW(adapted_forward(t, l, t.constant(Matrix(2, 5))), ShapeError);
}

TEST(AdaptedForward, MatchesMergedForwardOnRandomStacks) {
    // 100 random stacked configurations of up to 3 mixed adapters on 8x8.
    for (std::uint64_t s = 0; s < 100; ++s) {
        Rng rng(mix_seed(s, 77));
        LinearLayer l = make_random_layer(8, 8, mix_seed(s, 1));
        const int n = rng.uniform_int(0, 3);
        for (int i = 0; i < n; ++i) {
            const bool adalora = rng.uniform_int(0, 1) == 1;
            const int r = rng.uniform_int(1, 4);
            freeze_and_extend(l.stack, random_adapter(8, 8, r, mix_seed(s, 100 + i), adalora));
        }
        const Matrix x = rng.gaussian_matrix(4, 8, 1.0);

        Tape t;
        const Matrix via_stack = t.value(adapted_forward(t, l, t.constant(x)));
        const Matrix via_merge = add_row(matmul(x, transpose(merge_stack(l))), l.b.value);
        EXPECT_LT(max_abs_diff(via_stack, via_merge), 1e-10) << "stack seed " << s;
    }
}

TEST(MergeStack, EmptyStackLeavesWUnchanged) {
    LinearLayer l = make_random_layer(5, 3, 41);
    EXPECT_EQ(merge_stack(l), l.W.value);
}

TEST(MergeStack, SingleAdapterAddsDeltaTransposed) {
    LinearLayer l = make_random_layer(4, 6, 43);
    Adapter a = random_adapter(4, 6, 2, 5, false);
    const Matrix d = delta_weight(a);
    freeze_and_extend(l.stack, a);
    EXPECT_EQ(merge_stack(l), add(l.W.value, transpose(d)));
}

TEST(MergeStack, ThreeAdaptersMatchSumOfDeltas) {
    LinearLayer l = make_random_layer(8, 8, 47);
    Matrix sum(8, 8);
    for (int i = 0; i < 3; ++i) {
        Adapter a = random_adapter(8, 8, 3, 50 + i, i % 2 == 0);
        sum += delta_weight(a);
        freeze_and_extend(l.stack, a);
    }
    EXPECT_LT(max_abs_diff(merge_stack(l), add(l.W.value, transpose(sum))), 1e-12);
}

TEST(MergeStack, CommitFoldsAndClears) {
    LinearLayer l = make_random_layer(8, 8, 53);
    freeze_and_extend(l.stack, random_adapter(8, 8, 2, 3, false));
    const Matrix merged = merge_stack(l, /*commit=*/true);
    EXPECT_EQ(l.W.value, merged);
    EXPECT_TRUE(l.stack.empty());
}

TEST(FreezeAndExtend, Sequencing) {
    AdapterStack s;
    freeze_and_extend(s, random_adapter(8, 8, 2, 1, false));
    EXPECT_TRUE(s.frozen.empty());
    ASSERT_TRUE(s.active.has_value());
    EXPECT_TRUE(adapter_trainable(*s.active));

    Adapter first = *s.active;
    freeze_and_extend(s, random_adapter(8, 8, 2, 2, true));
    ASSERT_EQ(s.frozen.size(), 1u);
    EXPECT_FALSE(adapter_trainable(s.frozen[0]));
    EXPECT_EQ(adapter_A(s.frozen[0]).value, adapter_A(first).value);

    freeze_and_extend(s, random_adapter(8, 8, 3, 3, false));
    ASSERT_EQ(s.frozen.size(), 2u);
    // Ordering preserved: frozen[0] is the first-installed adapter.
    EXPECT_EQ(adapter_A(s.frozen[0]).value, adapter_A(first).value);
    EXPECT_EQ(adapter_rank(s.frozen[1]), 2);
}

TEST(FreezeAndExtend, RejectsShapeMismatch) {
    AdapterStack s;
    freeze_and_extend(s, random_adapter(8, 8, 2, 1, false));
    EXPECT_THROW(freeze_and_extend(s, random_adapter(8, 6, 2, 2, false)), ShapeError);
}

TEST(MaskedLambda, StoredValueOfMaskedEntryIsInert) {
    LinearLayer l = make_random_layer(8, 8, 61);
    AdaLoraAdapter a = init_adalora(8, 8, 4, 8);
    Rng rng(62);
    rng.fill_gaussian(a.lambda.value, 1.0);
    a.mask[2] = 0;
    freeze_and_extend(l.stack, a);

    const Matrix x = rng.gaussian_matrix(3, 8, 1.0);
    Tape t1;
    const Matrix before = t1.value(adapted_forward(t1, l, t1.constant(x)));

    auto& active = std::get<AdaLoraAdapter>(*l.stack.active);
    active.lambda.value(0, 2) = 1234.5;  // toggling a masked slot must be invisible
    Tape t2;
    const Matrix after = t2.value(adapted_forward(t2, l, t2.constant(x)));
    EXPECT_EQ(before, after);
}

TEST(Frozen, OptimizerStyleUpdateSkipsFrozenParams) {
    Adapter a = random_adapter(8, 8, 3, 9, true);
    set_adapter_trainable(a, false);
    const Matrix a_before = adapter_A(a).value;

    LinearLayer l = make_random_layer(8, 8, 63);
    l.stack.frozen.push_back(a);
    Rng rng(64);
    const Matrix x = rng.gaussian_matrix(2, 8, 1.0);
    Tape t;
    Var y = adapted_forward(t, l, t.constant(x));
    t.backward(t.frobenius_sq(y));
    EXPECT_EQ(adapter_A(l.stack.frozen[0]).grad, Matrix(8, 3));
    EXPECT_EQ(adapter_A(l.stack.frozen[0]).value, a_before);
}

TEST(AdaptedForward, GradientsThroughStack) {
    LinearLayer l = make_random_layer(6, 5, 71);
    l.W.trainable = false;
    l.b.trainable = false;
    freeze_and_extend(l.stack, random_adapter(6, 5, 2, 11, false));
    freeze_and_extend(l.stack, random_adapter(6, 5, 3, 12, true));
    auto& active = std::get<AdaLoraAdapter>(*l.stack.active);

    Rng rng(72);
    const Matrix x = rng.gaussian_matrix(3, 6, 1.0);
    const Matrix mixer = rng.gaussian_matrix(3, 5, 1.0);
    auto f = [&](bool record) {
        Tape t;
        Var loss = t.frobenius_sq(t.mul(adapted_forward(t, l, t.constant(x)), t.constant(mixer)));
        if (record) t.backward(loss);
        return t.value(loss)(0, 0);
    };
    const double err =
        finite_diff_check(f, {&active.A, &active.lambda, &active.B}, 1e-6);
    EXPECT_LT(err, 1e-5);
}
