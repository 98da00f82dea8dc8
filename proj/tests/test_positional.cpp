#include <cmath>

#include "doctest.h"

#include "forge/positional.hpp"
#include "helpers.hpp"

using namespace forge;
using testutil::max_abs_diff;

TEST_CASE("sinusoidal: position zero encodes to [0,1,0,1]") {
    auto pos = PositionValues::from_row({0.0});
    Tensor enc = sinusoidal_encoding(pos, 4, 10000.0, Dtype::f64);
    CHECK(enc.at({0, 0, 0}) == 0.0);
    CHECK(enc.at({0, 0, 1}) == 1.0);
    CHECK(enc.at({0, 0, 2}) == 0.0);
    CHECK(enc.at({0, 0, 3}) == 1.0);
}

TEST_CASE("sinusoidal: closed form at position 1, d=4") {
    auto pos = PositionValues::from_row({1.0});
    Tensor enc = sinusoidal_encoding(pos, 4, 10000.0, Dtype::f64);
    CHECK(enc.at({0, 0, 0}) == doctest::Approx(0.84147).epsilon(1e-5));
    CHECK(enc.at({0, 0, 1}) == doctest::Approx(0.54030).epsilon(1e-5));
    CHECK(enc.at({0, 0, 2}) == doctest::Approx(std::sin(0.01)).epsilon(1e-9));
    CHECK(enc.at({0, 0, 3}) == doctest::Approx(std::cos(0.01)).epsilon(1e-9));
}

TEST_CASE("sinusoidal: non-integer positions follow the closed form") {
    auto pos = PositionValues::from_row({0.5});
    Tensor enc = sinusoidal_encoding(pos, 4, 10000.0, Dtype::f64);
    CHECK(enc.at({0, 0, 0}) == doctest::Approx(std::sin(0.5)).epsilon(1e-12));
    CHECK(enc.at({0, 0, 1}) == doctest::Approx(std::cos(0.5)).epsilon(1e-12));
    CHECK(enc.at({0, 0, 2}) == doctest::Approx(std::sin(0.005)).epsilon(1e-12));
}

TEST_CASE("sinusoidal: odd d_model is rejected") {
    auto pos = PositionValues::from_row({0.0});
    CHECK_THROWS_AS((void)sinusoidal_encoding(pos, 5), DataError);
}

TEST_CASE("learned: lookup, gradients, and range errors") {
    auto table = LearnedPositionTable::make(4, 6, Dtype::f64, 7, "pos_table");
    auto pos = PositionValues::arange(2, 3);

    SUBCASE("all-zero positions repeat row zero") {
        PositionValues zeros = pos;
        std::fill(zeros.values.begin(), zeros.values.end(), 0.0);
        Tensor enc = learned_encoding(zeros, table);
        for (int b = 0; b < 2; ++b)
            for (int t = 0; t < 3; ++t)
                for (int j = 0; j < 6; ++j)
                    CHECK(enc.at({b, t, j}) == table.table.at({0, j}));
    }

    SUBCASE("used rows get gradient, unused rows stay empty") {
        Tensor loss = sum_all(learned_encoding(pos, table));
        loss.backward();
        Tensor g = table.table.grad();
        CHECK(g.at({0, 0}) != 0.0);
        CHECK(g.at({2, 0}) != 0.0);
        CHECK(g.at({3, 0}) == 0.0); // position 3 never used by arange(2, 3)
    }

    SUBCASE("position == table size is out of range") {
        PositionValues bad = PositionValues::from_row({3.0, 4.0});
        CHECK_THROWS_WITH_AS((void)learned_encoding(bad, table), doctest::Contains("[0, 4)"),
                             DataError);
    }

    SUBCASE("non-integer position is rejected with the offending value") {
        PositionValues bad = PositionValues::from_row({1.5});
        CHECK_THROWS_WITH_AS((void)learned_encoding(bad, table), doctest::Contains("1.5"),
                             DataError);
    }
}

TEST_CASE("rotary: zero positions are the identity") {
    Tensor q = testutil::random_leaf({2, 2, 3, 4}, 11, 0, 0.1, 2.0, false);
    Tensor k = testutil::random_leaf({2, 2, 3, 4}, 11, 1, 0.1, 2.0, false);
    PositionValues zeros = PositionValues::arange(2, 3);
    std::fill(zeros.values.begin(), zeros.values.end(), 0.0);
    auto [q2, k2] = rotary_transform(q, k, zeros, zeros);
    CHECK(max_abs_diff(q, q2) == 0.0);
    CHECK(max_abs_diff(k, k2) == 0.0);
}

TEST_CASE("rotary: 2-d rotation by pi/2 maps [1,0] to [0,1]") {
    Tensor q = Tensor::from_values({1, 1, 1, 2}, {1.0, 0.0}, Dtype::f64);
    Tensor k = Tensor::from_values({1, 1, 1, 2}, {1.0, 0.0}, Dtype::f64);
    PositionValues pos = PositionValues::from_row({std::acos(-1.0) / 2.0});
    auto [q2, k2] = rotary_transform(q, k, pos, pos, 10000.0); // theta_0 == 1 for any base
    CHECK(std::abs(q2.at_flat(0)) < 1e-6);
    CHECK(q2.at_flat(1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("rotary: odd head dimension is rejected") {
    Tensor q = Tensor::zeros({1, 1, 1, 3});
    PositionValues pos = PositionValues::from_row({0.0});
    CHECK_THROWS_AS((void)rotary_transform(q, q, pos, pos), DataError);
}

TEST_CASE("rotary: norms are preserved") {
    Tensor q = testutil::random_leaf({2, 3, 5, 8}, 13, 0, 0.1, 2.0, false);
    PositionValues pos = PositionValues::arange(2, 5);
    auto [q2, k2] = rotary_transform(q, q, pos, pos);
    for (int b = 0; b < 2; ++b)
        for (int h = 0; h < 3; ++h)
            for (int t = 0; t < 5; ++t) {
                double n0 = 0, n1 = 0;
                for (int j = 0; j < 8; ++j) {
                    n0 += q.at({b, h, t, j}) * q.at({b, h, t, j});
                    n1 += q2.at({b, h, t, j}) * q2.at({b, h, t, j});
                }
                CHECK(std::abs(std::sqrt(n0) - std::sqrt(n1)) < 1e-5);
            }
}

TEST_CASE("rotary: dot products depend only on the position offset") {
    // dot(q'(m), k'(n)) must equal dot(q'(m+s), k'(n+s)) for any shift s.
    const double m = 2.0, n = 5.0;
    Tensor q = testutil::random_leaf({1, 1, 1, 8}, 17, 0, 0.1, 2.0, false);
    Tensor k = testutil::random_leaf({1, 1, 1, 8}, 17, 1, 0.1, 2.0, false);

    auto dot_at = [&](double pm, double pn) {
        auto [qr, kr] = rotary_transform(q, k, PositionValues::from_row({pm}),
                                         PositionValues::from_row({pn}));
        double d = 0;
        for (int j = 0; j < 8; ++j) d += qr.at_flat(j) * kr.at_flat(j);
        return d;
    };

    const double base_dot = dot_at(m, n);
    for (double s : {1.0, 3.0, 7.0}) CHECK(std::abs(dot_at(m + s, n + s) - base_dot) < 1e-5);
}

TEST_CASE("rotary: gradient matches finite differences") {
    Tensor q = testutil::random_leaf({1, 2, 3, 4}, 19, 0);
    Tensor k = testutil::random_leaf({1, 2, 3, 4}, 19, 1);
    PositionValues pos = PositionValues::arange(1, 3);
    double worst = testutil::grad_check(
        [&]() {
            auto [qr, kr] = rotary_transform(q, k, pos, pos);
            return sum_all(add(mul(qr, testutil::loss_weights({1, 2, 3, 4}, 20)),
                               mul(kr, testutil::loss_weights({1, 2, 3, 4}, 21))));
        },
        {q, k});
    CHECK(worst < 1e-4);
}

TEST_CASE("alibi: slope schedule for eight heads") {
    auto slopes = AlibiSlopes::standard(8);
    for (int h = 1; h <= 8; ++h)
        CHECK(slopes.slopes[static_cast<std::size_t>(h - 1)] == std::pow(2.0, -h));
    for (std::size_t i = 1; i < slopes.slopes.size(); ++i)
        CHECK(slopes.slopes[i] < slopes.slopes[i - 1]); // strictly decreasing
}

TEST_CASE("alibi: bias values and structure") {
    auto slopes = AlibiSlopes::standard(8);
    std::vector<double> pos{0, 1, 2, 3};
    Tensor bias = alibi_bias(pos, pos, slopes, AlibiMode::symmetric, Dtype::f64);
    CHECK(bias.shape() == Shape{8, 4, 4});

    // zero diagonal, non-positive everywhere, monotone in distance
    for (int h = 0; h < 8; ++h) {
        for (int i = 0; i < 4; ++i) CHECK(bias.at({h, i, i}) == 0.0);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) CHECK(bias.at({h, i, j}) <= 0.0);
        for (int d = 1; d < 3; ++d)
            CHECK(bias.at({h, 0, d + 1}) <= bias.at({h, 0, d}));
    }

    // head 1 has slope 1/2: distance 3 costs -1.5
    CHECK(bias.at({0, 0, 3}) == doctest::Approx(-1.5));

    SUBCASE("causal mode zeroes future positions") {
        Tensor causal = alibi_bias(pos, pos, slopes, AlibiMode::causal, Dtype::f64);
        CHECK(causal.at({0, 1, 3}) == 0.0);              // future: left for the mask
        CHECK(causal.at({0, 3, 1}) == doctest::Approx(-1.0)); // past: -0.5 * 2
    }
}

TEST_CASE("strategy manager: pre-additive composition") {
    const std::int64_t d = 6;
    Tensor emb = testutil::random_leaf({2, 3, d}, 23, 0, 0.1, 1.0, false);
    PositionValues pos = PositionValues::arange(2, 3);

    SUBCASE("all flags off is the identity") {
        PositionalStrategyManager mgr(EncodingSet{}, d, 2, Dtype::f64);
        Tensor out = mgr.apply_pre_additive(emb, pos);
        CHECK(max_abs_diff(out, emb) == 0.0);
    }

    SUBCASE("sinusoidal only adds the sinusoidal table") {
        EncodingSet set;
        set.sinusoidal = true;
        PositionalStrategyManager mgr(set, d, 2, Dtype::f64);
        Tensor expect = add(emb, sinusoidal_encoding(pos, d, set.sinusoidal_base, Dtype::f64));
        CHECK(max_abs_diff(mgr.apply_pre_additive(emb, pos), expect) == 0.0);
    }

    SUBCASE("sinusoidal + learned equals the sum of both, either order") {
        EncodingSet set;
        set.sinusoidal = true;
        set.learned = true;
        set.learned_max_positions = 8;
        auto table = LearnedPositionTable::make(8, d, Dtype::f64, 5, "pos_table");
        PositionalStrategyManager mgr(set, d, 2, Dtype::f64, table.table);

        Tensor sin_enc = sinusoidal_encoding(pos, d, set.sinusoidal_base, Dtype::f64);
        Tensor lrn_enc = learned_encoding(pos, table);
        Tensor expect_a = add(emb, add(sin_enc, lrn_enc));
        Tensor expect_b = add(emb, add(lrn_enc, sin_enc));
        Tensor got = mgr.apply_pre_additive(emb, pos);
        CHECK(max_abs_diff(got, expect_a) == 0.0);
        CHECK(max_abs_diff(expect_a, expect_b) == 0.0); // summation order is immaterial
    }

    SUBCASE("learned flag propagates integer-position errors") {
        EncodingSet set;
        set.learned = true;
        set.learned_max_positions = 8;
        auto table = LearnedPositionTable::make(8, d, Dtype::f64, 5, "pos_table");
        PositionalStrategyManager mgr(set, d, 2, Dtype::f64, table.table);
        PositionValues frac;
        frac.batch = 2;
        frac.length = 3;
        frac.values = {0, 1, 2, 0, 1.25, 2};
        CHECK_THROWS_AS((void)mgr.apply_pre_additive(emb, frac), DataError);
    }
}

TEST_CASE("strategy manager: qk and score-bias hooks") {
    const std::int64_t d = 8, h = 2;
    Tensor q = testutil::random_leaf({1, h, 3, d / h}, 29, 0, 0.1, 1.0, false);
    Tensor k = testutil::random_leaf({1, h, 3, d / h}, 29, 1, 0.1, 1.0, false);
    PositionValues pos = PositionValues::arange(1, 3);

    SUBCASE("rotary off leaves q and k untouched") {
        PositionalStrategyManager mgr(EncodingSet{}, d, h, Dtype::f64);
        auto [q2, k2] = mgr.apply_qk(q, k, pos, pos);
        CHECK(max_abs_diff(q, q2) == 0.0);
        CHECK(mgr.counters().qk == 1);
    }

    SUBCASE("alibi on zero scores yields exactly the bias") {
        EncodingSet set;
        set.alibi = true;
        PositionalStrategyManager mgr(set, d, h, Dtype::f64);
        Tensor scores = Tensor::zeros({1, h, 3, 3}, Dtype::f64);
        Tensor biased = mgr.apply_score_bias(scores, pos, pos, AttentionContext::encoder_self);
        Tensor expect = alibi_bias(pos.row(0), pos.row(0), mgr.slopes(), AlibiMode::symmetric,
                                   Dtype::f64);
        for (int hh = 0; hh < h; ++hh)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    CHECK(biased.at({0, hh, i, j}) == expect.at({hh, i, j}));
    }

    SUBCASE("cross-attention gets no alibi bias") {
        EncodingSet set;
        set.alibi = true;
        PositionalStrategyManager mgr(set, d, h, Dtype::f64);
        Tensor scores = testutil::random_leaf({1, h, 3, 3}, 31, 0, 0.1, 1.0, false);
        Tensor out = mgr.apply_score_bias(scores, pos, pos, AttentionContext::cross);
        CHECK(max_abs_diff(out, scores) == 0.0);
        CHECK(mgr.counters().score_bias == 1);
    }

    SUBCASE("per-batch positions fall back to stacked biases") {
        EncodingSet set;
        set.alibi = true;
        PositionalStrategyManager mgr(set, d, h, Dtype::f64);
        PositionValues ragged;
        ragged.batch = 2;
        ragged.length = 2;
        ragged.values = {0, 1, 0, 3};
        Tensor scores = Tensor::zeros({2, h, 2, 2}, Dtype::f64);
        Tensor biased = mgr.apply_score_bias(scores, ragged, ragged,
                                             AttentionContext::encoder_self);
        CHECK(biased.at({0, 0, 0, 1}) == doctest::Approx(-1.0 / 16.0)); // head 1 of 2: slope 2^-4
        CHECK(biased.at({1, 0, 0, 1}) == doctest::Approx(3.0 * biased.at({0, 0, 0, 1})));
    }
}

TEST_CASE("hook counters count one fire per call") {
    PositionalStrategyManager mgr(EncodingSet{}, 8, 2, Dtype::f64);
    Tensor emb = Tensor::zeros({1, 2, 8}, Dtype::f64);
    Tensor q = Tensor::zeros({1, 2, 2, 4}, Dtype::f64);
    Tensor scores = Tensor::zeros({1, 2, 2, 2}, Dtype::f64);
    PositionValues pos = PositionValues::arange(1, 2);

    mgr.counters().reset();
    (void)mgr.apply_pre_additive(emb, pos);
    (void)mgr.apply_qk(q, q, pos, pos);
    (void)mgr.apply_qk(q, q, pos, pos);
    (void)mgr.apply_score_bias(scores, pos, pos, AttentionContext::encoder_self);
    CHECK(mgr.counters().pre_additive == 1);
    CHECK(mgr.counters().qk == 2);
    CHECK(mgr.counters().score_bias == 1);
}
