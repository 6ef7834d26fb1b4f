#include <string>

#include "doctest.h"
#include "ive/model_state.hpp"
#include "ive/rng.hpp"

using namespace ive;

TEST_SUITE_BEGIN("model_state");

TEST_CASE("sha256 matches the published test vectors") {
    // FIPS 180-2 appendix values for "abc" and the empty string.
    CHECK(sha256_hex("abc", 3) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("", 0) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("tensor digest separates shape from data") {
    // Same bytes, different shapes must produce different digests; a [2,3]
    // and a [3,2] of identical data are distinct tensors.
    Tensor<float> a = Tensor<float>::arange({2, 3});
    Tensor<float> b = Tensor<float>::arange({3, 2});
    Tensor<float> c = Tensor<float>::arange({2, 3});
    CHECK(tensor_digest(a) != tensor_digest(b));
    CHECK(tensor_digest(a) == tensor_digest(c));
    c.data[4] += 1.0f;
    CHECK(tensor_digest(a) != tensor_digest(c));
}

TEST_CASE("digest is sensitive to the sign bit of zero") {
    Tensor<float> a = Tensor<float>::zeros({3});
    Tensor<float> b = Tensor<float>::zeros({3});
    b.data[1] = -0.0f;
    CHECK(a.data[1] == b.data[1]);  // numerically equal
    CHECK(tensor_digest(a) != tensor_digest(b));  // but not bitwise
}

TEST_CASE("store add rejects duplicates and missing lookups") {
    ParamStore<float> s;
    s.add("w", Tensor<float>::zeros({2, 2}), false);
    CHECK_THROWS_AS(s.add("w", Tensor<float>::zeros({2, 2}), false), IncompatibleShapes);
    CHECK_THROWS_AS(s.at("nope"), IncompatibleShapes);
    CHECK(s.has("w"));
    CHECK_FALSE(s.has("nope"));
}

TEST_CASE("trainable and frozen partitions are disjoint and exhaustive") {
    ParamStore<float> s;
    auto rng = make_rng(31, "store");
    s.add("frozen.a", random_normal<float>({2, 2}, rng), true);
    s.add("train.b", random_normal<float>({3}, rng), false);
    s.add("frozen.c", random_normal<float>({4}, rng), true);
    s.add("train.d", random_normal<float>({1}, rng), false);

    auto tr = s.trainable_names();
    auto fr = s.frozen_names();
    CHECK(tr == std::vector<std::string>{"train.b", "train.d"});
    CHECK(fr == std::vector<std::string>{"frozen.a", "frozen.c"});
    CHECK(tr.size() + fr.size() == s.tensors.size());
}

TEST_CASE("frozen digests track only frozen tensors and detect drift") {
    ParamStore<float> s;
    auto rng = make_rng(32, "digest");
    s.add("f.w", random_normal<float>({4, 4}, rng), true);
    s.add("t.w", random_normal<float>({4, 4}, rng), false);

    auto before = frozen_digests(s);
    CHECK(before.size() == 1);
    CHECK(before.count("f.w") == 1);

    // Mutating a trainable tensor leaves the frozen digest set unchanged.
    s.at("t.w").data[0] += 1.0f;
    CHECK(frozen_digests(s) == before);

    // The smallest possible frozen mutation is detected.
    float* p = &s.at("f.w").data[7];
    const float old = *p;
    *p = std::nextafter(old, old + 1.0f);
    CHECK(frozen_digests(s) != before);
}

TEST_CASE("store digest covers every tensor and the name map") {
    ParamStore<float> a;
    a.add("x", Tensor<float>::full({2}, 1.0f), false);
    a.add("y", Tensor<float>::full({2}, 2.0f), false);
    ParamStore<float> b;
    b.add("x", Tensor<float>::full({2}, 2.0f), false);
    b.add("y", Tensor<float>::full({2}, 1.0f), false);
    // Same multiset of tensors under different names: digests must differ.
    CHECK(store_digest(a) != store_digest(b));

    ParamStore<float> c;
    c.add("x", Tensor<float>::full({2}, 1.0f), false);
    c.add("y", Tensor<float>::full({2}, 2.0f), false);
    CHECK(store_digest(a) == store_digest(c));
}

TEST_CASE("bind_params honors freezing and the train flag") {
    ParamStore<double> s;
    auto rng = make_rng(33, "bind");
    s.add("frozen.w", random_normal<double>({2, 2}, rng), true);
    s.add("train.w", random_normal<double>({2, 2}, rng), false);

    {
        Tape<double> t;
        auto bp = bind_params(t, s, /*train=*/true);
        auto x = t.input(random_normal<double>({1, 2}, rng));
        auto y = t.matmul(t.matmul(x, bp.at("frozen.w")), bp.at("train.w"));
        auto loss = t.mse(y, t.constant(Tensor<double>::zeros({1, 2})));
        t.backward(loss);
        CHECK(max_abs(t.grad(bp.at("train.w"))) > 0.0);
        CHECK(max_abs(t.grad(bp.at("frozen.w"))) == 0.0);
    }
    {
        Tape<double> t;
        auto bp = bind_params(t, s, /*train=*/false);
        auto x = t.input(random_normal<double>({1, 2}, rng));
        auto y = t.matmul(t.matmul(x, bp.at("frozen.w")), bp.at("train.w"));
        auto loss = t.mse(y, t.constant(Tensor<double>::zeros({1, 2})));
        t.backward(loss);
        CHECK(max_abs(t.grad(bp.at("train.w"))) == 0.0);
    }
}

TEST_CASE("bound values are bitwise copies of the store") {
    ParamStore<float> s;
    auto rng = make_rng(34, "bindval");
    s.add("a", random_normal<float>({3, 3}, rng), false);
    Tape<float> t;
    auto bp = bind_params(t, s, true);
    CHECK(bitwise_equal(t.val(bp.at("a")), s.at("a")));
    CHECK_THROWS_AS(bp.at("missing"), IncompatibleShapes);
}

TEST_CASE("typed accessors assemble parameter bundles by prefix") {
    ParamStore<double> s;
    auto rng = make_rng(35, "typed");
    const std::size_t d = 4;
    for (const char* leaf : {"wq", "wk", "wv", "wo"})
        s.add(std::string("blk.attn.") + leaf, random_normal<double>({d, d}, rng), false);
    s.add("blk.ln.g", Tensor<double>::ones({d}), false);
    s.add("blk.ln.b", Tensor<double>::zeros({d}), false);
    s.add("blk.z.w", Tensor<double>::zeros({d, d}), false);
    s.add("blk.z.b", Tensor<double>::zeros({d}), false);
    s.add("blk.gate.w1", random_normal<double>({d, d}, rng), false);
    s.add("blk.gate.b1", Tensor<double>::zeros({d}), false);
    s.add("blk.gate.w2", random_normal<double>({d, d}, rng), false);
    s.add("blk.gate.b2", Tensor<double>::zeros({d}), false);

    Tape<double> t;
    auto bp = bind_params(t, s, false);
    auto x = t.input(random_normal<double>({1, 3, d}, rng));
    auto h = mha(t, x, x, bp.mha_at("blk.attn", 2));
    auto n = layer_norm(t, h, bp.ln_at("blk.ln"));
    auto z = zero_linear(t, n, bp.zlin_at("blk.z"));
    auto g = gate_project(t, n, bp.gate_at("blk.gate"));
    CHECK(t.val(h).shape == Shape{1, 3, d});
    CHECK(t.val(n).shape == Shape{1, 3, d});
    for (double v : t.val(z).data) CHECK(v == 0.0);
    for (double v : t.val(g).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("cast_store preserves names, freezing, and float values exactly") {
    ParamStore<float> s;
    auto rng = make_rng(36, "cast");
    s.add("a", random_normal<float>({2, 3}, rng), true);
    s.add("b", random_normal<float>({3}, rng), false);
    auto d = cast_store<float, double>(s);
    CHECK(d.is_frozen("a"));
    CHECK_FALSE(d.is_frozen("b"));
    // float -> double is exact.
    for (std::size_t i = 0; i < s.at("a").data.size(); ++i)
        CHECK(d.at("a").data[i] == static_cast<double>(s.at("a").data[i]));
}

TEST_SUITE_END();
