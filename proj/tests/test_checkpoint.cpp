#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "ive/checkpoint.hpp"
#include "ive/errors.hpp"
#include "ive/rng.hpp"

using namespace ive;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ive_ckpt_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor<float> randn(const Shape& sh, Rng& rng, float scale) {
    Tensor<float> t(sh);
    for (auto& v : t.data) v = scale * static_cast<float>(rng.normal());
    return t;
}

TrainConfig sample_config() {
    TrainConfig cfg;
    cfg.phase = TrainPhase::Pretrain;
    cfg.learning_rate = 3e-4;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.steps = 77;
    cfg.beta1 = 0.85;
    cfg.beta2 = 0.995;
    cfg.adam_eps = 1e-7;
    cfg.seed = 99;
    cfg.ablation = AblationMode::NoTextGate;
    cfg.log_every = 10;
    cfg.checkpoint_path = "out/run.ive";
    cfg.model = DiTConfig::tiny();
    return cfg;
}

Checkpoint sample_checkpoint() {
    Checkpoint ckpt;
    ckpt.config = sample_config();
    ckpt.step = 123456789012345ULL;
    Rng rng = make_rng(7, "ckpt");
    ckpt.params.add("bk.attn.wq", randn({8, 8}, rng, 0.3f), true);
    ckpt.params.add("bk.head.b", randn({8}, rng, 0.3f), true);
    ckpt.params.add("pu.zlin.w", Tensor<float>({4, 4}), false);
    ckpt.params.add("pu.gate.b", randn({2, 3}, rng, 1.0f), false);
    ckpt.opt.m.emplace("pu.gate.b", randn({2, 3}, rng, 0.1f));
    ckpt.opt.v.emplace("pu.gate.b", randn({2, 3}, rng, 0.01f));
    ckpt.opt.t = 17;
    return ckpt;
}

/// Parses the on-disk header, lets the caller mutate it, and reassembles the
/// file with a corrected header length (blob bytes untouched).
std::string rewrite_header(const std::string& bytes,
                           const std::function<void(nlohmann::json&)>& mutate) {
    REQUIRE(bytes.size() >= 12);
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
    nlohmann::json header = nlohmann::json::parse(bytes.substr(12, hlen));
    mutate(header);
    const std::string htext = header.dump();
    std::string out = bytes.substr(0, 4);
    const std::uint64_t n = htext.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
    out += htext;
    out += bytes.substr(12 + hlen);
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("phase names round-trip") {
    CHECK(to_string(TrainPhase::Pretrain) == "pretrain");
    CHECK(to_string(TrainPhase::EditTrain) == "edit");
    CHECK(parse_phase("pretrain") == TrainPhase::Pretrain);
    CHECK(parse_phase("edit") == TrainPhase::EditTrain);
    CHECK_THROWS_AS(parse_phase("finetune"), DomainError);
}

TEST_CASE("train config JSON round-trips field by field") {
    const TrainConfig a = sample_config();
    const TrainConfig b = train_config_from_json(train_config_to_json(a));
    CHECK(b.phase == a.phase);
    CHECK(b.learning_rate == a.learning_rate);
    CHECK(b.batch_size == a.batch_size);
    CHECK(b.epochs == a.epochs);
    CHECK(b.steps == a.steps);
    CHECK(b.beta1 == a.beta1);
    CHECK(b.beta2 == a.beta2);
    CHECK(b.adam_eps == a.adam_eps);
    CHECK(b.seed == a.seed);
    CHECK(b.ablation == a.ablation);
    CHECK(b.log_every == a.log_every);
    CHECK(b.checkpoint_path == a.checkpoint_path);
    CHECK(b.model.image_size == a.model.image_size);
    CHECK(b.model.channels == a.model.channels);
    CHECK(b.model.patch == a.model.patch);
    CHECK(b.model.frames_max == a.model.frames_max);
    CHECK(b.model.d_model == a.model.d_model);
    CHECK(b.model.heads == a.model.heads);
    CHECK(b.model.blocks == a.model.blocks);
    CHECK(b.model.vocab == a.model.vocab);
    CHECK(b.model.prompt_len == a.model.prompt_len);
    CHECK(b == a);

    CHECK_THROWS_AS(train_config_from_json("not json at all"), CorruptManifest);
    CHECK_THROWS_AS(train_config_from_json("{\"phase\": \"edit\"}"), CorruptManifest);
    // structurally valid JSON with a semantically unknown phase
    std::string text = train_config_to_json(a);
    text.replace(text.find("pretrain"), 8, "warm-up!");
    CHECK_THROWS_AS(train_config_from_json(text), DomainError);
}

TEST_CASE("config validation rejects out-of-range settings") {
    TrainConfig cfg;
    cfg.model = DiTConfig::tiny();
    cfg.validate();

    TrainConfig bad = cfg;
    bad.learning_rate = -1e-3;  // zero stays legal as the no-op probe
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = cfg;
    bad.epochs = 0;  // edit phase needs epochs
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = cfg;
    bad.phase = TrainPhase::Pretrain;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = cfg;
    bad.log_every = 0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("config digest is stable and field-sensitive") {
    const TrainConfig a = sample_config();
    const std::string d = config_digest(a);
    CHECK(d.size() == 64);
    CHECK(config_digest(a) == d);

    TrainConfig b = a;
    b.seed += 1;
    CHECK(config_digest(b) != d);
    b = a;
    b.learning_rate *= 2;
    CHECK(config_digest(b) != d);
    b = a;
    b.ablation = AblationMode::Full;
    CHECK(config_digest(b) != d);
    b = a;
    b.model.d_model *= 2;
    CHECK(config_digest(b) != d);
    b = a;
    b.phase = TrainPhase::EditTrain;
    CHECK(config_digest(b) != d);
}

TEST_CASE("first adam step matches the closed form") {
    // With zero moments, one step moves each element by about lr * sign(g):
    // m/(1-b1) == g and v/(1-b2) == g^2 up to float storage rounding, so the
    // update is lr * g / (|g| + eps).
    ParamStore<float> params;
    Tensor<float> p({3});
    p.data = {1.0f, 2.0f, -3.0f};
    params.add("w", p, false);
    Tensor<float> g({3});
    g.data = {0.1f, -0.2f, 0.3f};

    AdamState state;
    adam_step(params, {{"w", g}}, state, 0.01, 0.9, 0.999, 1e-8);

    CHECK(state.t == 1);
    const Tensor<float>& out = params.at("w");
    CHECK(out.data[0] == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(out.data[1] == doctest::Approx(2.01).epsilon(1e-6));
    CHECK(out.data[2] == doctest::Approx(-3.01).epsilon(1e-6));
    for (std::size_t i = 0; i < 3; ++i) {
        const double gi = static_cast<double>(g.data[i]);
        CHECK(state.m.at("w").data[i] == static_cast<float>(0.1 * gi));
        CHECK(state.v.at("w").data[i] == static_cast<float>(0.001 * gi * gi));
    }
}

TEST_CASE("zero gradient on a fresh state changes nothing") {
    ParamStore<float> params;
    Rng rng = make_rng(11, "adam_zero");
    params.add("w", randn({4, 5}, rng, 0.7f), false);
    const Tensor<float> before = params.at("w");

    AdamState state;
    adam_step(params, {{"w", Tensor<float>({4, 5})}}, state, 0.05, 0.9, 0.999, 1e-8);

    CHECK(bitwise_equal(params.at("w"), before));
    CHECK(state.t == 1);
    for (float v : state.m.at("w").data) CHECK(v == 0.0f);
    for (float v : state.v.at("w").data) CHECK(v == 0.0f);
}

TEST_CASE("moments decay exactly when a later gradient is zero") {
    ParamStore<float> params;
    Tensor<float> p({2});
    p.data = {0.5f, -0.5f};
    params.add("w", p, false);
    Tensor<float> g({2});
    g.data = {0.4f, -0.1f};

    AdamState state;
    adam_step(params, {{"w", g}}, state, 0.01, 0.9, 0.999, 1e-8);
    const Tensor<float> m1 = state.m.at("w");
    const Tensor<float> v1 = state.v.at("w");
    const Tensor<float> p1 = params.at("w");

    adam_step(params, {{"w", Tensor<float>({2})}}, state, 0.01, 0.9, 0.999, 1e-8);
    CHECK(state.t == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(state.m.at("w").data[i] ==
              static_cast<float>(0.9 * static_cast<double>(m1.data[i])));
        CHECK(state.v.at("w").data[i] ==
              static_cast<float>(0.999 * static_cast<double>(v1.data[i])));
    }
    // momentum keeps pushing in the same direction even with zero gradient
    CHECK(params.at("w").data[0] < p1.data[0]);
    CHECK(params.at("w").data[1] > p1.data[1]);
}

TEST_CASE("zero learning rate leaves parameters bitwise untouched") {
    ParamStore<float> params;
    Rng rng = make_rng(12, "adam_lr0");
    params.add("w", randn({6}, rng, 1.0f), false);
    const Tensor<float> before = params.at("w");

    AdamState state;
    adam_step(params, {{"w", randn({6}, rng, 1.0f)}}, state, 0.0, 0.9, 0.999, 1e-8);
    CHECK(bitwise_equal(params.at("w"), before));
    CHECK(state.t == 1);
    bool any_moment = false;
    for (float v : state.m.at("w").data) any_moment |= (v != 0.0f);
    CHECK(any_moment);
}

TEST_CASE("optimizer matches an independent reimplementation bitwise") {
    // Oracle with a different traversal order (reverse names, reverse
    // elements); per-element arithmetic is order-free, so any disagreement
    // means the production loop deviates from the pinned formula.
    ParamStore<float> params;
    Rng rng = make_rng(13, "adam_oracle");
    params.add("a", randn({3, 4}, rng, 0.5f), false);
    params.add("b", randn({7}, rng, 0.5f), false);
    params.add("c", randn({2, 2, 2}, rng, 0.5f), false);

    std::map<std::string, Tensor<float>> o_params;
    std::map<std::string, Tensor<float>> o_m, o_v;
    for (const auto& n : params.names()) o_params.emplace(n, params.at(n));

    const double lr = 0.004, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    AdamState state;
    for (std::uint64_t step = 1; step <= 7; ++step) {
        std::map<std::string, Tensor<float>> grads;
        Rng grng = make_rng(13, "grads", step);
        for (const auto& n : params.names()) grads.emplace(n, randn(params.at(n).shape, grng, 1.0f));

        adam_step(params, grads, state, lr, b1, b2, eps);

        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (auto it = grads.rbegin(); it != grads.rend(); ++it) {
            const std::string& n = it->first;
            Tensor<float>& p = o_params.at(n);
            auto& m = o_m.try_emplace(n, Tensor<float>(p.shape)).first->second;
            auto& v = o_v.try_emplace(n, Tensor<float>(p.shape)).first->second;
            for (std::size_t i = p.size(); i-- > 0;) {
                const double gi = static_cast<double>(it->second.data[i]);
                m.data[i] = static_cast<float>(b1 * static_cast<double>(m.data[i]) + (1 - b1) * gi);
                v.data[i] =
                    static_cast<float>(b2 * static_cast<double>(v.data[i]) + (1 - b2) * gi * gi);
                const double mhat = static_cast<double>(m.data[i]) / c1;
                const double vhat = static_cast<double>(v.data[i]) / c2;
                p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) -
                                               lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
        for (const auto& n : params.names()) {
            CHECK(bitwise_equal(params.at(n), o_params.at(n)));
            CHECK(bitwise_equal(state.m.at(n), o_m.at(n)));
            CHECK(bitwise_equal(state.v.at(n), o_v.at(n)));
        }
    }
    CHECK(state.t == 7);
}

TEST_CASE("gradient shape disagreement is rejected") {
    ParamStore<float> params;
    params.add("w", Tensor<float>({2, 2}), false);
    AdamState state;
    CHECK_THROWS_AS(adam_step(params, {{"w", Tensor<float>({4})}}, state, 0.01, 0.9, 0.999, 1e-8),
                    ShapeMismatch);
    CHECK_THROWS_AS(
        adam_step(params, {{"nope", Tensor<float>({2})}}, state, 0.01, 0.9, 0.999, 1e-8),
        IncompatibleShapes);
}

TEST_CASE("checkpoints round-trip bitwise") {
    const fs::path dir = fresh_dir("roundtrip");
    const Checkpoint ckpt = sample_checkpoint();
    const fs::path file = dir / "nested" / "run.ive";
    save_checkpoint(file, ckpt);  // creates the parent directory
    CHECK(!fs::exists(file.string() + ".tmp"));

    const Checkpoint back = load_checkpoint(file);
    CHECK(back.config == ckpt.config);
    CHECK(back.step == ckpt.step);
    CHECK(back.opt.t == ckpt.opt.t);
    REQUIRE(back.params.names() == ckpt.params.names());
    for (const auto& n : ckpt.params.names()) {
        CHECK(bitwise_equal(back.params.at(n), ckpt.params.at(n)));
        CHECK(back.params.is_frozen(n) == ckpt.params.is_frozen(n));
    }
    REQUIRE(back.opt.m.size() == ckpt.opt.m.size());
    REQUIRE(back.opt.v.size() == ckpt.opt.v.size());
    for (const auto& [n, t] : ckpt.opt.m) CHECK(bitwise_equal(back.opt.m.at(n), t));
    for (const auto& [n, t] : ckpt.opt.v) CHECK(bitwise_equal(back.opt.v.at(n), t));
    CHECK(checkpoint_digest(back) == checkpoint_digest(ckpt));

    // the writer is deterministic: saving the same state twice gives the
    // same bytes
    save_checkpoint(dir / "again.ive", ckpt);
    CHECK(slurp(file) == slurp(dir / "again.ive"));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint digest reacts to every part of the state") {
    const Checkpoint base = sample_checkpoint();
    const std::string d = checkpoint_digest(base);

    Checkpoint c = sample_checkpoint();
    c.step += 1;
    CHECK(checkpoint_digest(c) != d);
    c = sample_checkpoint();
    c.opt.t += 1;
    CHECK(checkpoint_digest(c) != d);
    c = sample_checkpoint();
    c.params.at("pu.gate.b").data[0] += 1.0f;
    CHECK(checkpoint_digest(c) != d);
    c = sample_checkpoint();
    c.opt.m.at("pu.gate.b").data[0] += 1.0f;
    CHECK(checkpoint_digest(c) != d);
    c = sample_checkpoint();
    c.params.frozen.erase("bk.head.b");
    CHECK(checkpoint_digest(c) != d);
    c = sample_checkpoint();
    c.config.seed += 1;
    CHECK(checkpoint_digest(c) != d);
}

TEST_CASE("corrupted checkpoints are rejected by kind") {
    const fs::path dir = fresh_dir("corrupt");
    const Checkpoint ckpt = sample_checkpoint();
    const fs::path file = dir / "run.ive";
    save_checkpoint(file, ckpt);
    const std::string good = slurp(file);
    const fs::path hurt = dir / "hurt.ive";

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ive"), CorruptManifest);

    std::string bad = good;
    bad[0] = 'X';
    dump(hurt, bad);
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);  // magic

    dump(hurt, good.substr(0, 5));
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);  // shorter than any header

    bad = good;
    bad[4] = '\xff';  // header length far past the end of the file
    bad[5] = '\xff';
    bad[6] = '\xff';
    dump(hurt, bad);
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    bad = good;
    for (std::size_t i = 12; i < 40; ++i) bad[i] = '#';  // header no longer JSON
    dump(hurt, bad);
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    dump(hurt, rewrite_header(good, [](nlohmann::json& h) { h["version"] = 9; }));
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    dump(hurt, rewrite_header(good, [](nlohmann::json& h) { h.erase("step"); }));
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    dump(hurt, rewrite_header(good, [](nlohmann::json& h) {
             h["tensors"][0]["role"] = "mystery";
         }));
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    dump(hurt, rewrite_header(good, [](nlohmann::json& h) {
             // length no longer matches the recorded shape
             h["tensors"][0]["length"] = h["tensors"][0]["length"].get<std::size_t>() + 4;
         }));
    CHECK_THROWS_AS(load_checkpoint(hurt), CorruptManifest);

    dump(hurt, good.substr(0, good.size() - 10));
    CHECK_THROWS_AS(load_checkpoint(hurt), TruncatedBlob);

    bad = good;
    bad[good.size() - 1] = static_cast<char>(bad[good.size() - 1] ^ 0x10);
    dump(hurt, bad);
    CHECK_THROWS_AS(load_checkpoint(hurt), ChecksumMismatch);

    fs::remove_all(dir);
}

TEST_CASE("a fresh checkpoint without moments round-trips") {
    const fs::path dir = fresh_dir("fresh");
    Checkpoint ckpt;
    ckpt.config = sample_config();
    Rng rng = make_rng(5, "fresh");
    ckpt.params.add("w", randn({3}, rng, 1.0f), false);
    save_checkpoint(dir / "fresh.ive", ckpt);
    const Checkpoint back = load_checkpoint(dir / "fresh.ive");
    CHECK(back.step == 0);
    CHECK(back.opt.t == 0);
    CHECK(back.opt.m.empty());
    CHECK(back.opt.v.empty());
    CHECK(bitwise_equal(back.params.at("w"), ckpt.params.at("w")));
    fs::remove_all(dir);
}

TEST_SUITE_END();
