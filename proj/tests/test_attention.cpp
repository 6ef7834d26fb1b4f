#include <cmath>
#include <vector>

#include "doctest.h"
#include "ive/attention.hpp"
#include "ive/gradcheck.hpp"
#include "ive/rng.hpp"
#include "ive/tensor.hpp"

using namespace ive;

namespace {

// Independent single-head attention oracle: softmax(q kᵀ / sqrt(d)) v with
// plain loops, no tape involved.
Tensor<double> attn_oracle_1head(const Tensor<double>& x, const Tensor<double>& wq,
                                 const Tensor<double>& wk, const Tensor<double>& wv,
                                 const Tensor<double>& wo) {
    const std::size_t S = x.shape[1], d = x.shape[2];
    auto proj = [&](const Tensor<double>& w) {
        Tensor<double> out = Tensor<double>::zeros({S, d});
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0;
                for (std::size_t k = 0; k < d; ++k) acc += x.data[s * d + k] * w.data[k * d + j];
                out.data[s * d + j] = acc;
            }
        return out;
    };
    Tensor<double> q = proj(wq), k = proj(wk), v = proj(wv);
    Tensor<double> ctx = Tensor<double>::zeros({S, d});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t s = 0; s < S; ++s) {
        std::vector<double> row(S);
        double mx = -1e300;
        for (std::size_t tpos = 0; tpos < S; ++tpos) {
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += q.data[s * d + j] * k.data[tpos * d + j];
            row[tpos] = dot * scale;
            mx = std::max(mx, row[tpos]);
        }
        double z = 0;
        for (auto& r : row) {
            r = std::exp(r - mx);
            z += r;
        }
        for (std::size_t tpos = 0; tpos < S; ++tpos)
            for (std::size_t j = 0; j < d; ++j)
                ctx.data[s * d + j] += (row[tpos] / z) * v.data[tpos * d + j];
    }
    Tensor<double> out = Tensor<double>::zeros({1, S, d});
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0;
            for (std::size_t k2 = 0; k2 < d; ++k2)
                acc += ctx.data[s * d + k2] * wo.data[k2 * d + j];
            out.data[s * d + j] = acc;
        }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("single query and key: attention weight is exactly one") {
    // With S == T == 1 the softmax row has one entry, so the context vector is
    // exactly v regardless of the score value.
    Tape<double> t;
    auto rng = make_rng(11, "attn-single");
    const std::size_t d = 4;
    auto x = t.input(random_normal<double>({1, 1, d}, rng));
    MhaParams<double> p{t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)),
                        t.input(Tensor<double>::zeros({d, d})), 2};
    // wo = I so the output equals the merged context, which must equal v.
    Tensor<double> eye = Tensor<double>::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.data[i * d + i] = 1.0;
    p.wo = t.input(eye);

    auto out = mha(t, x, x, p);
    auto v = t.matmul(x, p.wv);
    const Tensor<double> a = t.val(out);
    const Tensor<double> b = t.val(v);
    CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("zero value projection gives exactly zero output") {
    Tape<double> t;
    auto rng = make_rng(12, "attn-zerov");
    const std::size_t d = 8;
    auto x = t.input(random_normal<double>({2, 5, d}, rng));
    MhaParams<double> p{t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)),
                        t.input(Tensor<double>::zeros({d, d})),
                        t.input(random_normal<double>({d, d}, rng)), 4};
    auto out = mha(t, x, x, p);
    const Tensor<double> o = t.val(out);
    CHECK(max_abs(o) == 0.0);
}

TEST_CASE("single head matches loop oracle") {
    Tape<double> t;
    auto rng = make_rng(13, "attn-oracle");
    const std::size_t S = 5, d = 6;
    Tensor<double> xv = random_normal<double>({1, S, d}, rng);
    Tensor<double> wq = random_normal<double>({d, d}, rng, 0.5);
    Tensor<double> wk = random_normal<double>({d, d}, rng, 0.5);
    Tensor<double> wv = random_normal<double>({d, d}, rng, 0.5);
    Tensor<double> wo = random_normal<double>({d, d}, rng, 0.5);
    auto x = t.input(xv);
    MhaParams<double> p{t.input(wq), t.input(wk), t.input(wv), t.input(wo), 1};
    auto out = mha(t, x, x, p);
    Tensor<double> expect = attn_oracle_1head(xv, wq, wk, wv, wo);
    CHECK(max_abs_diff(t.val(out), expect) < 1e-10);
}

TEST_CASE("two heads with block-diagonal projections match per-half oracles") {
    // With all projections block-diagonal over the two halves of the width,
    // two-head attention must equal running each half as its own single-head
    // attention on the corresponding slice.
    Tape<double> t;
    auto rng = make_rng(14, "attn-heads");
    const std::size_t S = 4, d = 4, hd = 2;
    Tensor<double> xv = random_normal<double>({1, S, d}, rng);
    auto block_diag = [&](Tensor<double>& a, Tensor<double>& b) {
        Tensor<double> w = Tensor<double>::zeros({d, d});
        for (std::size_t i = 0; i < hd; ++i)
            for (std::size_t j = 0; j < hd; ++j) {
                w.data[i * d + j] = a.data[i * hd + j];
                w.data[(hd + i) * d + (hd + j)] = b.data[i * hd + j];
            }
        return w;
    };
    Tensor<double> qa = random_normal<double>({hd, hd}, rng), qb = random_normal<double>({hd, hd}, rng);
    Tensor<double> ka = random_normal<double>({hd, hd}, rng), kb = random_normal<double>({hd, hd}, rng);
    Tensor<double> va = random_normal<double>({hd, hd}, rng), vb = random_normal<double>({hd, hd}, rng);
    Tensor<double> eye = Tensor<double>::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.data[i * d + i] = 1.0;

    auto x = t.input(xv);
    MhaParams<double> p2{t.input(block_diag(qa, qb)), t.input(block_diag(ka, kb)),
                         t.input(block_diag(va, vb)), t.input(eye), 2};
    auto out2 = mha(t, x, x, p2);
    const Tensor<double> got = t.val(out2);

    // Each half via the single-head oracle on the sliced input.
    for (int half = 0; half < 2; ++half) {
        Tensor<double> xs = Tensor<double>::zeros({1, S, hd});
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t j = 0; j < hd; ++j)
                xs.data[s * hd + j] = xv.data[s * d + half * hd + j];
        Tensor<double> eye_h = Tensor<double>::zeros({hd, hd});
        for (std::size_t i = 0; i < hd; ++i) eye_h.data[i * hd + i] = 1.0;
        Tensor<double> expect = attn_oracle_1head(xs, half ? qb : qa, half ? kb : ka,
                                                  half ? vb : va, eye_h);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t j = 0; j < hd; ++j)
                CHECK(got.data[s * d + half * hd + j] ==
                      doctest::Approx(expect.data[s * hd + j]).epsilon(1e-10));
    }
}

TEST_CASE("cross-attention ignores kv order") {
    // Attention is a weighted sum over key-value pairs; permuting the kv
    // sequence permutes the weights with the values and changes nothing.
    Tape<double> t;
    auto rng = make_rng(15, "attn-perm");
    const std::size_t d = 6, Tk = 3;
    Tensor<double> qv = random_normal<double>({1, 2, d}, rng);
    Tensor<double> kv = random_normal<double>({1, Tk, d}, rng);
    Tensor<double> kv_rev = Tensor<double>::zeros({1, Tk, d});
    for (std::size_t s = 0; s < Tk; ++s)
        for (std::size_t j = 0; j < d; ++j)
            kv_rev.data[s * d + j] = kv.data[(Tk - 1 - s) * d + j];

    MhaParams<double> p{t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)),
                        t.input(random_normal<double>({d, d}, rng)), 3};
    auto a = mha(t, t.input(qv), t.input(kv), p);
    auto b = mha(t, t.input(qv), t.input(kv_rev), p);
    CHECK(max_abs_diff(t.val(a), t.val(b)) < 1e-12);
}

TEST_CASE("mha validates shapes and head divisibility") {
    Tape<double> t;
    auto rng = make_rng(16, "attn-th");
    const std::size_t d = 4;
    auto x = t.input(random_normal<double>({1, 2, d}, rng));
    auto w = t.input(random_normal<double>({d, d}, rng));
    MhaParams<double> bad_heads{w, w, w, w, 3};
    CHECK_THROWS_AS(mha(t, x, x, bad_heads), ShapeMismatch);
    auto kv_bad = t.input(random_normal<double>({1, 2, d + 1}, rng));
    MhaParams<double> p{w, w, w, w, 2};
    CHECK_THROWS_AS(mha(t, x, kv_bad, p), ShapeMismatch);
    auto rank2 = t.input(random_normal<double>({2, d}, rng));
    CHECK_THROWS_AS(mha(t, rank2, rank2, p), ShapeMismatch);
}

TEST_CASE("mha gradient matches finite differences") {
    auto rng = make_rng(17, "attn-grad");
    const std::size_t S = 3, d = 4;
    std::vector<Tensor<double>> inputs = {
        random_normal<double>({1, S, d}, rng, 0.7), random_normal<double>({d, d}, rng, 0.5),
        random_normal<double>({d, d}, rng, 0.5),    random_normal<double>({d, d}, rng, 0.5),
        random_normal<double>({d, d}, rng, 0.5)};
    ScalarFn f = [](const std::vector<Tensor<double>>& vs) {
        Tape<double> t;
        auto x = t.input(vs[0]);
        MhaParams<double> p{t.input(vs[1]), t.input(vs[2]), t.input(vs[3]), t.input(vs[4]), 2};
        auto out = mha(t, x, x, p);
        auto loss = t.mse(out, t.constant(Tensor<double>::zeros(t.val(out).shape)));
        return t.val(loss).data[0];
    };
    for (std::size_t wrt = 0; wrt < inputs.size(); ++wrt) {
        Tensor<double> fd = finite_diff_grad(f, inputs, wrt);
        Tape<double> t;
        std::vector<Tape<double>::Id> ids;
        for (auto& v : inputs) ids.push_back(t.input(v, true));
        MhaParams<double> p{ids[1], ids[2], ids[3], ids[4], 2};
        auto out = mha(t, ids[0], ids[0], p);
        auto loss = t.mse(out, t.constant(Tensor<double>::zeros(t.val(out).shape)));
        t.backward(loss);
        const double re = rel_error(t.grad(ids[wrt]), fd);
        INFO("wrt input ", wrt, " rel_err=", re);
        CHECK(re < 1e-4);
    }
}

TEST_CASE("zero-linear built from zero tensors is the exact zero map") {
    Tape<float> t;
    auto rng = make_rng(18, "zlin");
    const std::size_t d = 8;
    ZeroLinParams<float> p{t.input(Tensor<float>::zeros({d, d})),
                           t.input(Tensor<float>::zeros({d}))};
    auto x = t.input(random_normal<float>({3, 5, d}, rng, 10.0f));
    auto y = zero_linear(t, x, p);
    const Tensor<float> o = t.val(y);
    for (float v : o.data) CHECK(v == 0.0f);
}

TEST_CASE("zero-linear with identity weight reproduces the input") {
    Tape<double> t;
    auto rng = make_rng(19, "zlin-id");
    const std::size_t d = 5;
    Tensor<double> eye = Tensor<double>::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.data[i * d + i] = 1.0;
    ZeroLinParams<double> p{t.input(eye), t.input(Tensor<double>::zeros({d}))};
    Tensor<double> xv = random_normal<double>({2, 3, d}, rng);
    auto y = zero_linear(t, t.input(xv), p);
    CHECK(bitwise_equal(t.val(y), xv));
}

TEST_CASE("zero-linear gradient matches finite differences") {
    auto rng = make_rng(20, "zlin-grad");
    const std::size_t d = 4;
    std::vector<Tensor<double>> inputs = {random_normal<double>({2, 3, d}, rng),
                                          random_normal<double>({d, d}, rng),
                                          random_normal<double>({d}, rng)};
    ScalarFn f = [](const std::vector<Tensor<double>>& vs) {
        Tape<double> t;
        ZeroLinParams<double> p{t.input(vs[1]), t.input(vs[2])};
        auto y = zero_linear(t, t.input(vs[0]), p);
        auto loss = t.mse(y, t.constant(Tensor<double>::full(t.val(y).shape, 0.3)));
        return t.val(loss).data[0];
    };
    for (std::size_t wrt = 0; wrt < inputs.size(); ++wrt) {
        Tensor<double> fd = finite_diff_grad(f, inputs, wrt);
        Tape<double> t;
        std::vector<Tape<double>::Id> ids;
        for (auto& v : inputs) ids.push_back(t.input(v, true));
        ZeroLinParams<double> p{ids[1], ids[2]};
        auto y = zero_linear(t, ids[0], p);
        auto loss = t.mse(y, t.constant(Tensor<double>::full(t.val(y).shape, 0.3)));
        t.backward(loss);
        CHECK(rel_error(t.grad(ids[wrt]), fd) < 1e-4);
    }
}

TEST_CASE("gate with all-zero parameters outputs exactly one half") {
    Tape<double> t;
    auto rng = make_rng(21, "gate-half");
    const std::size_t d = 6;
    GateProjParams<double> p{t.input(Tensor<double>::zeros({d, d})),
                             t.input(Tensor<double>::zeros({d})),
                             t.input(Tensor<double>::zeros({d, d})),
                             t.input(Tensor<double>::zeros({d}))};
    auto g = gate_project(t, t.input(random_normal<double>({2, 4, d}, rng)), p);
    for (double v : t.val(g).data) CHECK(v == 0.5);
}

TEST_CASE("large positive output bias saturates the gate toward one") {
    Tape<double> t;
    auto rng = make_rng(22, "gate-sat");
    const std::size_t d = 4;
    GateProjParams<double> p{t.input(random_normal<double>({d, d}, rng)),
                             t.input(Tensor<double>::zeros({d})),
                             t.input(Tensor<double>::zeros({d, d})),
                             t.input(Tensor<double>::full({d}, 20.0))};
    auto g = gate_project(t, t.input(random_normal<double>({1, 3, d}, rng)), p);
    for (double v : t.val(g).data) {
        CHECK(v > 0.9999);
        CHECK(v < 1.0);  // the sigmoid never reaches the boundary
    }
}

TEST_CASE("gate output stays strictly inside the open unit interval") {
    Tape<float> t;
    auto rng = make_rng(23, "gate-open");
    const std::size_t d = 4;
    GateProjParams<float> p{t.input(random_normal<float>({d, d}, rng, 5.0f)),
                            t.input(random_normal<float>({d}, rng, 5.0f)),
                            t.input(random_normal<float>({d, d}, rng, 5.0f)),
                            t.input(random_normal<float>({d}, rng, 50.0f))};
    auto g = gate_project(t, t.input(random_normal<float>({4, 8, d}, rng, 3.0f)), p);
    for (float v : t.val(g).data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("gate gradient matches finite differences") {
    auto rng = make_rng(24, "gate-grad");
    const std::size_t d = 4;
    std::vector<Tensor<double>> inputs = {
        random_normal<double>({2, 4, d}, rng), random_normal<double>({d, d}, rng, 0.5),
        random_normal<double>({d}, rng, 0.5),  random_normal<double>({d, d}, rng, 0.5),
        random_normal<double>({d}, rng, 0.5)};
    ScalarFn f = [](const std::vector<Tensor<double>>& vs) {
        Tape<double> t;
        GateProjParams<double> p{t.input(vs[1]), t.input(vs[2]), t.input(vs[3]), t.input(vs[4])};
        auto g = gate_project(t, t.input(vs[0]), p);
        auto loss = t.mse(g, t.constant(Tensor<double>::full(t.val(g).shape, 1.0)));
        return t.val(loss).data[0];
    };
    for (std::size_t wrt = 0; wrt < inputs.size(); ++wrt) {
        Tensor<double> fd = finite_diff_grad(f, inputs, wrt);
        Tape<double> t;
        std::vector<Tape<double>::Id> ids;
        for (auto& v : inputs) ids.push_back(t.input(v, true));
        GateProjParams<double> p{ids[1], ids[2], ids[3], ids[4]};
        auto g = gate_project(t, ids[0], p);
        auto loss = t.mse(g, t.constant(Tensor<double>::full(t.val(g).shape, 1.0)));
        t.backward(loss);
        CHECK(rel_error(t.grad(ids[wrt]), fd) < 1e-4);
    }
}

TEST_SUITE_END();
