#include <cmath>
#include <vector>

#include "doctest.h"
#include "ive/flow.hpp"
#include "ive/rng.hpp"

using namespace ive;

TEST_SUITE_BEGIN("flow");

TEST_CASE("interpolation endpoints are exact") {
    auto rng = make_rng(70, "endpoints");
    Tensor<double> x0 = random_normal<double>({2, 3}, rng);
    Tensor<double> x1 = random_normal<double>({2, 3}, rng);
    CHECK(bitwise_equal(interpolate(x0, x1, 0.0).xt, x0));
    CHECK(bitwise_equal(interpolate(x0, x1, 1.0).xt, x1));
}

TEST_CASE("midpoint interpolation equals the elementwise average on integers") {
    Tensor<double> x0 = Tensor<double>::zeros({4});
    Tensor<double> x1 = Tensor<double>::zeros({4});
    const double a[4] = {2, -4, 6, 0}, b[4] = {10, 4, -6, 8};
    for (int i = 0; i < 4; ++i) {
        x0.data[i] = a[i];
        x1.data[i] = b[i];
    }
    FlowSample<double> s = interpolate(x0, x1, 0.5);
    for (int i = 0; i < 4; ++i) {
        CHECK(s.xt.data[i] == (a[i] + b[i]) / 2.0);
        CHECK(s.u.data[i] == b[i] - a[i]);
    }
    CHECK(s.t == 0.5);
}

TEST_CASE("target velocity is constant in t for a fixed endpoint pair") {
    auto rng = make_rng(71, "uconst");
    Tensor<double> x0 = random_normal<double>({3, 3}, rng);
    Tensor<double> x1 = random_normal<double>({3, 3}, rng);
    const Tensor<double> u_ref = interpolate(x0, x1, 0.0).u;
    for (double t : {0.25, 0.5, 0.75, 1.0})
        CHECK(bitwise_equal(interpolate(x0, x1, t).u, u_ref));
}

TEST_CASE("interpolation validates its inputs") {
    Tensor<double> a = Tensor<double>::zeros({2});
    Tensor<double> b = Tensor<double>::zeros({3});
    CHECK_THROWS_AS(interpolate(a, b, 0.5), ShapeMismatch);
    Tensor<double> c = Tensor<double>::zeros({2});
    CHECK_THROWS_AS(interpolate(a, c, -0.1), DomainError);
    CHECK_THROWS_AS(interpolate(a, c, 1.1), DomainError);
}

TEST_CASE("loss vanishes exactly on a perfect prediction and is one at unit offset") {
    auto rng = make_rng(72, "fmloss");
    Tensor<double> u = random_normal<double>({2, 5}, rng);
    {
        Tape<double> t;
        auto v = t.input(u);
        CHECK(t.val(fm_loss(t, v, u)).data[0] == 0.0);
    }
    {
        Tensor<double> off = u;
        for (auto& x : off.data) x += 1.0;
        Tape<double> t;
        auto v = t.input(off);
        CHECK(t.val(fm_loss(t, v, u)).data[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("masked loss equals a hand computation over target indices") {
    auto rng = make_rng(73, "maskloss");
    // Stacked pair: rows 0..B-1 source, B..2B-1 target (B = 2).
    Tensor<double> pred = random_normal<double>({4, 3}, rng);
    Tensor<double> u = random_normal<double>({4, 3}, rng);
    Tensor<double> mask = target_stream_mask<double>({4, 3});

    double expect = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 2; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            const double dd = pred.at({r, c}) - u.at({r, c});
            expect += dd * dd;
            ++count;
        }
    expect /= static_cast<double>(count);

    Tape<double> t;
    auto v = t.input(pred);
    auto loss = fm_loss_masked(t, v, u, mask);
    CHECK(t.val(loss).data[0] == doctest::Approx(expect).epsilon(1e-12));

    // Changing a source-row prediction must not move the masked loss.
    Tensor<double> pred2 = pred;
    pred2.at({0, 0}) += 100.0;
    Tape<double> t2;
    auto loss2 = fm_loss_masked(t2, t2.input(pred2), u, mask);
    CHECK(t2.val(loss2).data[0] == t.val(loss).data[0]);
}

TEST_CASE("all-zero mask is rejected") {
    Tape<double> t;
    auto v = t.input(Tensor<double>::zeros({2, 2}));
    Tensor<double> mask = Tensor<double>::zeros({2, 2});
    CHECK_THROWS_AS(fm_loss_masked(t, v, Tensor<double>::zeros({2, 2}), mask), EmptyMask);
}

TEST_CASE("target mask covers exactly the second half of the batch") {
    Tensor<float> m = target_stream_mask<float>({6, 2, 2});
    for (std::size_t i = 0; i < 3 * 4; ++i) CHECK(m.data[i] == 0.0f);
    for (std::size_t i = 3 * 4; i < 6 * 4; ++i) CHECK(m.data[i] == 1.0f);
    CHECK_THROWS_AS(target_stream_mask<float>({5, 2}), ShapeMismatch);
}

TEST_CASE("euler is exact on constant fields for power-of-two step counts") {
    // Integer state and velocity keep every intermediate a dyadic rational,
    // so the discretization is bitwise exact.
    Tensor<double> x0 = Tensor<double>::zeros({3});
    x0.data = {1.0, -2.0, 7.0};
    Tensor<double> c = Tensor<double>::zeros({3});
    c.data = {3.0, 5.0, -1.0};
    VelocityField<double> field = [&](const Tensor<double>&, double) { return c; };
    for (std::size_t steps : {1u, 2u, 4u, 32u}) {
        Tensor<double> got = euler_sample(field, x0, {steps});
        for (int i = 0; i < 3; ++i) CHECK(got.data[i] == x0.data[i] + c.data[i]);
    }
    // Odd step counts agree to roundoff.
    Tensor<double> got3 = euler_sample(field, x0, {3});
    for (int i = 0; i < 3; ++i)
        CHECK(got3.data[i] == doctest::Approx(x0.data[i] + c.data[i]).epsilon(1e-13));
}

TEST_CASE("zero field leaves the state untouched") {
    auto rng = make_rng(74, "zerofield");
    Tensor<double> x0 = random_normal<double>({4, 4}, rng);
    VelocityField<double> field = [](const Tensor<double>& x, double) {
        return Tensor<double>::zeros(x.shape);
    };
    CHECK(bitwise_equal(euler_sample(field, x0, {32}), x0));
}

TEST_CASE("state-independent fields are insensitive to the step count") {
    Tensor<double> x0 = Tensor<double>::zeros({2});
    x0.data = {0.5, -1.5};
    Tensor<double> a = Tensor<double>::zeros({2});
    a.data = {2.0, -4.0};
    VelocityField<double> field = [&](const Tensor<double>&, double) { return a; };
    Tensor<double> r8 = euler_sample(field, x0, {8});
    Tensor<double> r16 = euler_sample(field, x0, {16});
    for (int i = 0; i < 2; ++i) {
        CHECK(r8.data[i] == x0.data[i] + a.data[i]);
        CHECK(r16.data[i] == r8.data[i]);
    }
}

TEST_CASE("halving the step size halves the error on a quadratic field") {
    // v(t) = t^2; exact endpoint x0 + 1/3. Euler truncation error is
    // 1/(2n) - 1/(6n^2), so the n -> 2n error ratio must sit near 2.
    Tensor<double> x0 = Tensor<double>::zeros({1});
    VelocityField<double> field = [](const Tensor<double>&, double t) {
        Tensor<double> v = Tensor<double>::zeros({1});
        v.data[0] = t * t;
        return v;
    };
    const double exact = 1.0 / 3.0;
    const double e8 = std::abs(euler_sample(field, x0, {8}).data[0] - exact);
    const double e16 = std::abs(euler_sample(field, x0, {16}).data[0] - exact);
    const double e32 = std::abs(euler_sample(field, x0, {32}).data[0] - exact);
    CHECK(e8 / e16 > 1.5);
    CHECK(e8 / e16 < 2.5);
    CHECK(e16 / e32 > 1.5);
    CHECK(e16 / e32 < 2.5);
}

TEST_CASE("divergence raises a non-finite-state error naming the step") {
    Tensor<double> x0 = Tensor<double>::ones({2});
    VelocityField<double> field = [](const Tensor<double>& x, double t) {
        Tensor<double> v = Tensor<double>::zeros(x.shape);
        if (t > 0.4) v.data[0] = std::numeric_limits<double>::infinity();
        return v;
    };
    CHECK_THROWS_AS(euler_sample(field, x0, {4}), NonFiniteState);
    CHECK_THROWS_AS(euler_sample(field, x0, {0}), DomainError);
}

TEST_CASE("edit sampling is deterministic and respects identity at initialization") {
    DiTConfig cfg = DiTConfig::tiny();
    ParamStore<float> s = init_backbone(cfg, 75);
    {
        auto rng = make_rng(75, "head");
        s.at("backbone.head.w") = random_normal<float>({cfg.d_model, cfg.patch_dim()}, rng, 0.1f);
    }
    attach_pu_params(s, cfg, 76);

    auto rng = make_rng(75, "editdata");
    Tensor<float> source = random_uniform<float>({1, 3, 4, 4}, rng, 0.0, 1.0);
    const std::vector<std::int64_t> src_prompt = {3, 4};
    const std::vector<std::int64_t> edit_prompt = {5, 6};
    SamplerConfig scfg{8};

    auto run = [&](std::uint64_t noise_seed) {
        auto nrng = make_rng(noise_seed, "noise");
        return edit_sample<float>(cfg, s, AblationMode::Full, source, src_prompt, edit_prompt,
                                  scfg, nrng);
    };
    Tensor<float> a = run(100), b = run(100), c = run(101);
    CHECK(bitwise_equal(a, b));       // same seed, bitwise identical
    CHECK(max_abs_diff(a, c) > 0.0);  // different noise actually matters
    CHECK(a.shape == Shape{1, 3, 4, 4});

    // With zero-initialized adapters, editing equals unconditional sampling
    // of the bare backbone under the edit prompt from the same noise.
    auto nrng = make_rng(100, "noise");
    Tensor<float> noise = random_normal<float>({1, 1, 3, 4, 4}, nrng);
    Tensor<float> plain = plain_sample<float>(cfg, s, noise, {edit_prompt}, scfg);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(plain.data[i]).epsilon(1e-6));
}

TEST_CASE("edit sampling validates batch alignment") {
    DiTConfig cfg = DiTConfig::tiny();
    ParamStore<float> s = init_backbone(cfg, 77);
    attach_pu_params(s, cfg, 78);
    auto rng = make_rng(77, "align");
    Tensor<float> sources = random_uniform<float>({2, 1, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor<float> noise = random_normal<float>({2, 1, 3, 4, 4}, rng);
    CHECK_THROWS_AS(edit_sample_batch<float>(cfg, s, AblationMode::Full, sources, noise, {{3}},
                                             {{5}, {6}}, {4}),
                    MissingPrompt);
    Tensor<float> bad_noise = random_normal<float>({1, 1, 3, 4, 4}, rng);
    CHECK_THROWS_AS(edit_sample_batch<float>(cfg, s, AblationMode::Full, sources, bad_noise,
                                             {{3}, {4}}, {{5}, {6}}, {4}),
                    ShapeMismatch);
}

TEST_SUITE_END();
