#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "microclip/numerics.hpp"
#include "testutil.hpp"

using namespace microclip;
using namespace microclip::numerics;
using testutil::max_grad_rel_err;
using testutil::random_tensor;
using testutil::rel_err;

TEST_CASE("tensor basics and shape errors") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3, 4}).item(), ShapeError);

    try {
        Tape tape;
        Var a = tape.constant(Tensor({2, 3}));
        Var b = tape.constant(Tensor({4, 2}));
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,2)") != std::string::npos);
    }
}

TEST_CASE("matmul matches naive triple-loop oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        int64_t m = rng.next_int(1, 7), k = rng.next_int(1, 7), n = rng.next_int(1, 7);
        Tensor A = random_tensor({m, k}, rng.next_u64());
        Tensor B = random_tensor({k, n}, rng.next_u64());
        Tensor expect({m, n});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (int64_t p = 0; p < k; ++p) s += A.at(i, p) * B.at(p, j);
                expect.at(i, j) = s;
            }
        Tape tape;
        Var c = matmul(tape.constant(A), tape.constant(B));
        for (int64_t i = 0; i < m * n; ++i)
            CHECK(c.value().data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));

        Var cnt = matmul_nt(tape.constant(A), tape.constant(transpose(tape.constant(B)).value()));
        for (int64_t i = 0; i < m * n; ++i)
            CHECK(cnt.value().data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax of all-zero logits is uniform") {
    Tape tape;
    Var s = softmax_rows(tape.constant(Tensor({1, 4})));
    for (int i = 0; i < 4; ++i) CHECK(s.value().data()[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("l2 normalization is scale invariant") {
    for (double c : {1.0, 2.5, 1000.0}) {
        Tape tape;
        Var v = l2_normalize_rows(tape.constant(Tensor({1, 2}, {3.0 * c, 4.0 * c})));
        CHECK(v.value().data()[0] == doctest::Approx(0.6).epsilon(1e-12));
        CHECK(v.value().data()[1] == doctest::Approx(0.8).epsilon(1e-12));
    }
}

TEST_CASE("grad of sum is all ones, grad of dot-with-self is 2x") {
    Tape tape;
    Tensor xv = random_tensor({3, 4}, 11);
    Var x = tape.leaf(xv, "x");
    tape.backward(sum(x));
    for (int64_t i = 0; i < xv.size(); ++i) CHECK(tape.grad(x).data()[i] == 1.0);

    Tape tape2;
    Var y = tape2.leaf(xv, "y");
    tape2.backward(sum(hadamard(y, y)));
    for (int64_t i = 0; i < xv.size(); ++i)
        CHECK(tape2.grad(y).data()[i] == doctest::Approx(2.0 * xv.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape tape;
    Var x = tape.leaf(Tensor({2, 2}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

// Finite-difference checks for every differentiable op, randomized shapes.
TEST_CASE("per-op gradient checks") {
    Rng shapes(2024);
    auto weighted_loss = [](Tape& t, Var out, const Tensor& w) {
        return sum(hadamard(out, t.constant(w)));
    };

    for (int trial = 0; trial < 5; ++trial) {
        int64_t m = shapes.next_int(2, 5), n = shapes.next_int(2, 5), k = shapes.next_int(2, 5);
        uint64_t s0 = shapes.next_u64(), s1 = shapes.next_u64(), s2 = shapes.next_u64();

        SUBCASE("matmul and friends") {}
        // matmul
        {
            Tensor A = random_tensor({m, k}, s0), B = random_tensor({k, n}, s1);
            Tensor W = random_tensor({m, n}, s2);
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                return weighted_loss(t, matmul(t.leaf(ps[0]), t.leaf(ps[1])), W).value().item();
            };
            Tape t;
            Var a = t.leaf(A), b = t.leaf(B);
            t.backward(weighted_loss(t, matmul(a, b), W));
            CHECK(max_grad_rel_err(loss, {A, B}, {t.grad(a), t.grad(b)}) < 1e-4);
        }
        // matmul_nt
        {
            Tensor A = random_tensor({m, k}, s0), B = random_tensor({n, k}, s1);
            Tensor W = random_tensor({m, n}, s2);
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                return weighted_loss(t, matmul_nt(t.leaf(ps[0]), t.leaf(ps[1])), W).value().item();
            };
            Tape t;
            Var a = t.leaf(A), b = t.leaf(B);
            t.backward(weighted_loss(t, matmul_nt(a, b), W));
            CHECK(max_grad_rel_err(loss, {A, B}, {t.grad(a), t.grad(b)}) < 1e-4);
        }
        // elementwise and reductions
        {
            Tensor A = random_tensor({m, n}, s0), B = random_tensor({m, n}, s1);
            Tensor W = random_tensor({m, n}, s2);
            auto make = [&](Tape& t, Var a, Var b) {
                Var g = gelu(a);
                Var h = hadamard(g, b);
                Var sm = softmax_rows(h);
                Var ls = log_softmax_rows(add(h, g));
                Var l2 = l2_normalize_rows(sub(h, scale(b, 0.3)));
                Var total = add(add(sm, ls), l2);
                return add(scale(mean(weighted_loss(t, total, W)), 3.0),
                           sum(hadamard(exp_elem(scale(a, 0.1)), t.constant(W))));
            };
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                Var a = t.leaf(ps[0]), b = t.leaf(ps[1]);
                return make(t, a, b).value().item();
            };
            Tape t;
            Var a = t.leaf(A), b = t.leaf(B);
            t.backward(make(t, a, b));
            CHECK(max_grad_rel_err(loss, {A, B}, {t.grad(a), t.grad(b)}) < 1e-4);
        }
        // layer_norm
        {
            Tensor X = random_tensor({m, n}, s0), G = random_tensor({n}, s1),
                   Bv = random_tensor({n}, s2);
            Tensor W = random_tensor({m, n}, s0 ^ 0xabc);
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                return weighted_loss(t, layer_norm(t.leaf(ps[0]), t.leaf(ps[1]), t.leaf(ps[2])), W)
                    .value()
                    .item();
            };
            Tape t;
            Var x = t.leaf(X), g = t.leaf(G), b = t.leaf(Bv);
            t.backward(weighted_loss(t, layer_norm(x, g, b), W));
            CHECK(max_grad_rel_err(loss, {X, G, Bv}, {t.grad(x), t.grad(g), t.grad(b)}) < 1e-4);
        }
        // embedding + gather + diag + bias + tiled rows + scalar var + clip
        {
            int64_t vocab = 6, d = n;
            Tensor Tb = random_tensor({vocab, d}, s0);
            Tensor Bias = random_tensor({d}, s1);
            Tensor Pos = random_tensor({2, d}, s2);
            Tensor Sc = Tensor::scalar(0.7);
            std::vector<int32_t> ids = {1, 4, 0, 3};
            std::vector<int64_t> rows = {1, 3};
            Tensor W = random_tensor({2, d}, s1 ^ 0x55);
            auto make = [&](Tape& t, Var tb, Var bias, Var pos, Var sc) {
                Var e = embedding(tb, ids);                 // (4,d)
                Var e2 = add_bias(e, bias);
                Var e3 = add_rows_tiled(e2, pos, 2);        // batch 2, seq 2
                Var g = gather_rows(e3, rows);              // (2,d)
                Var c = clip_max(mul_scalar_var(g, sc), 0.9);
                Var sq = matmul_nt(c, c);                   // (2,2)
                Var dg = take_diag(sq);                     // (2,1)
                return add(sum(hadamard(c, t.constant(W))), sum(dg));
            };
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                return make(t, t.leaf(ps[0]), t.leaf(ps[1]), t.leaf(ps[2]), t.leaf(ps[3]))
                    .value()
                    .item();
            };
            Tape t;
            Var tb = t.leaf(Tb), bias = t.leaf(Bias), pos = t.leaf(Pos), sc = t.leaf(Sc);
            t.backward(make(t, tb, bias, pos, sc));
            CHECK(max_grad_rel_err(loss, {Tb, Bias, Pos, Sc},
                                   {t.grad(tb), t.grad(bias), t.grad(pos), t.grad(sc)}) < 1e-4);
        }
        // attention + prepend
        {
            int64_t batch = 2, seq = 3, heads = 2, d = 4;
            Tensor Q = random_tensor({batch * seq, d}, s0, 0.5);
            Tensor K = random_tensor({batch * seq, d}, s1, 0.5);
            Tensor V = random_tensor({batch * seq, d}, s2, 0.5);
            Tensor F = random_tensor({1, d}, s0 ^ 0x77, 0.5);
            std::vector<int32_t> lens = {3, 2};
            Tensor W = random_tensor({batch * (seq + 1), d}, s2 ^ 0x77);
            auto make = [&](Tape& t, Var q, Var k, Var v, Var f) {
                Var att = attention(q, k, v, batch, seq, heads, lens);
                Var cat = prepend_row_per_seq(f, att, batch, seq);
                return sum(hadamard(cat, t.constant(W)));
            };
            auto loss = [&](const std::vector<Tensor>& ps) {
                Tape t;
                return make(t, t.leaf(ps[0]), t.leaf(ps[1]), t.leaf(ps[2]), t.leaf(ps[3]))
                    .value()
                    .item();
            };
            Tape t;
            Var q = t.leaf(Q), k = t.leaf(K), v = t.leaf(V), f = t.leaf(F);
            t.backward(make(t, q, k, v, f));
            CHECK(max_grad_rel_err(loss, {Q, K, V, F},
                                   {t.grad(q), t.grad(k), t.grad(v), t.grad(f)}) < 1e-4);
        }
    }
}

TEST_CASE("forward ops stay finite on rough inputs") {
    Tape tape;
    // Softmax with huge spread relies on max subtraction.
    Var s = softmax_rows(tape.constant(Tensor({1, 3}, {1e6, -1e6, 0.0})));
    CHECK(s.value().all_finite());
    Var ls = log_softmax_rows(tape.constant(Tensor({1, 3}, {1e6, -1e6, 0.0})));
    CHECK(ls.value().all_finite());
    // Layer norm of a constant row: variance 0, epsilon keeps it finite.
    Var ln = layer_norm(tape.constant(Tensor::full({2, 4}, 3.0)),
                        tape.constant(Tensor::full({4}, 1.0)), tape.constant(Tensor({4})));
    CHECK(ln.value().all_finite());
    // Zero rows survive normalization.
    Var l2 = l2_normalize_rows(tape.constant(Tensor({2, 3})));
    CHECK(l2.value().all_finite());
}

TEST_CASE("lr schedule endpoints and continuity") {
    LrSchedule sched;
    sched.peak_lr = 5e-4;
    sched.warmup_steps = 2000;
    sched.total_steps = 340000;
    CHECK(lr_at(sched, 0) == 0.0);
    CHECK(lr_at(sched, 1000) == doctest::Approx(2.5e-4).epsilon(1e-12));
    CHECK(lr_at(sched, 2000) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(lr_at(sched, 340000) == doctest::Approx(0.0).epsilon(1e-16));
    CHECK(std::abs(lr_at(sched, 340000)) < 1e-19);

    CHECK_THROWS_AS(lr_at(sched, -1), ConfigError);
    CHECK_THROWS_AS(lr_at(sched, 340001), ConfigError);

    LrSchedule toy;
    toy.peak_lr = 1e-3;
    toy.warmup_steps = 13;
    toy.total_steps = 157;
    double bound = toy.peak_lr * (1.0 / toy.warmup_steps +
                                  M_PI / static_cast<double>(toy.total_steps - toy.warmup_steps));
    for (int64_t s = 0; s < toy.total_steps; ++s)
        CHECK(std::abs(lr_at(toy, s + 1) - lr_at(toy, s)) <= bound);

    LrSchedule bad;
    bad.warmup_steps = 10;
    bad.total_steps = 10;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adamw: zero gradients and zero decay leave parameters unchanged") {
    ParamSet params;
    params.push_back({"w", random_tensor({3, 3}, 5), true});
    Tensor before = params[0].value;
    auto state = AdamWState::init_like(params);
    LrSchedule sched;
    sched.peak_lr = 1e-3;
    sched.warmup_steps = 1;
    sched.total_steps = 100;
    sched.weight_decay = 0.0;
    for (int64_t s = 1; s <= 5; ++s)
        adamw_step(params, {Tensor({3, 3})}, state, sched, s);
    for (int64_t i = 0; i < before.size(); ++i)
        CHECK(params[0].value.data()[i] == before.data()[i]);
    CHECK(state.step_count == 5);
}

TEST_CASE("adamw matches a hand-rolled scalar oracle") {
    const double beta1 = 0.9, beta2 = 0.98, eps = 1e-6, wd = 0.1;
    const double grads[3] = {0.3, -0.2, 0.05};

    LrSchedule sched;
    sched.peak_lr = 1e-2;
    sched.warmup_steps = 2;
    sched.total_steps = 10;
    sched.weight_decay = wd;

    // Oracle: ten lines of AdamW on one scalar.
    double p = 0.5, m = 0.0, v = 0.0;
    double traj[3];
    for (int s = 1; s <= 3; ++s) {
        double g = grads[s - 1];
        double lr = lr_at(sched, s);
        m = beta1 * m + (1 - beta1) * g;
        v = beta2 * v + (1 - beta2) * g * g;
        double mhat = m / (1 - std::pow(beta1, s));
        double vhat = v / (1 - std::pow(beta2, s));
        p -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p);
        traj[s - 1] = p;
    }

    ParamSet params;
    params.push_back({"p", Tensor::scalar(0.5), true});
    auto state = AdamWState::init_like(params);
    for (int s = 1; s <= 3; ++s) {
        adamw_step(params, {Tensor::scalar(grads[s - 1])}, state, sched, s);
        CHECK(params[0].value.item() == doctest::Approx(traj[s - 1]).epsilon(1e-12));
    }
}

TEST_CASE("decoupled decay shrinks parameters by exactly (1 - lr*wd)") {
    ParamSet params;
    params.push_back({"w", Tensor::scalar(2.0), true});
    auto state = AdamWState::init_like(params);
    LrSchedule sched;
    sched.peak_lr = 0.01;
    sched.warmup_steps = 1;
    sched.total_steps = 1000;
    sched.weight_decay = 0.2;
    double expect = 2.0;
    for (int64_t s = 1; s <= 4; ++s) {
        adamw_step(params, {Tensor::scalar(0.0)}, state, sched, s);
        expect *= 1.0 - lr_at(sched, s) * 0.2;
        CHECK(params[0].value.item() == doctest::Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("adamw rejects NaN gradients naming the parameter") {
    ParamSet params;
    params.push_back({"encoder.w1", Tensor::scalar(1.0), true});
    auto state = AdamWState::init_like(params);
    LrSchedule sched;
    sched.warmup_steps = 1;
    sched.total_steps = 10;
    try {
        adamw_step(params, {Tensor::scalar(std::nan(""))}, state, sched, 1);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("encoder.w1") != std::string::npos);
    }
}

TEST_CASE("identical seeds give bit-identical parameters after N steps") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        ParamSet params;
        params.push_back({"a", Tensor::randn({4, 4}, rng, 0.1), true});
        params.push_back({"b", Tensor::randn({4}, rng, 0.1), false});
        auto state = AdamWState::init_like(params);
        LrSchedule sched;
        sched.peak_lr = 1e-2;
        sched.warmup_steps = 3;
        sched.total_steps = 50;
        Tensor data = Tensor::randn({4, 4}, rng, 1.0);
        for (int64_t s = 1; s <= 20; ++s) {
            Tape t;
            Var a = t.leaf(params[0].value, "a");
            Var b = t.leaf(params[1].value, "b");
            Var out = add_bias(matmul(t.constant(data), a), b);
            Var loss = mean(hadamard(out, out));
            t.backward(loss);
            adamw_step(params, {t.grad(a), t.grad(b)}, state, sched, s);
        }
        return params;
    };
    ParamSet p1 = run(42), p2 = run(42);
    for (size_t i = 0; i < p1.size(); ++i)
        for (int64_t j = 0; j < p1[i].value.size(); ++j)
            CHECK(p1[i].value.data()[j] == p2[i].value.data()[j]);
}
