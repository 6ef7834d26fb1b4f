// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "ive/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ive/backbone.hpp"
#include "ive/errors.hpp"
#include "ive/flow.hpp"
#include "ive/model_state.hpp"
#include "ive/predict_update.hpp"
#include "ive/rng.hpp"
#include "ive/tape.hpp"

namespace ive {

Tensor<double> finite_diff_grad(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                                std::size_t wrt, double h) {
    if (h < 1e-7 || h > 1e-3) throw DomainError("finite_diff_grad: h outside [1e-7, 1e-3]");
    if (wrt >= inputs.size()) throw InvalidAxis("finite_diff_grad: wrt out of range");
    Tensor<double> grad(inputs[wrt].shape);
    std::vector<Tensor<double>> work = inputs;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double orig = work[wrt].data[i];
        work[wrt].data[i] = orig + h;
        const double fp = f(work);
        work[wrt].data[i] = orig - h;
        const double fm = f(work);
        work[wrt].data[i] = orig;
        grad.data[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
    if (a.shape != b.shape)
        throw ShapeMismatch("rel_error " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double num = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        num = std::max(num, std::abs(a.data[i] - b.data[i]));
    const double denom = std::max({max_abs(a), max_abs(b), 1.0});
    return num / denom;
}

namespace {

using T = Tape<double>;
using Id = T::Id;
using Builder = std::function<Id(T&, const std::vector<Id>&)>;

/// Compares tape gradients of a scalar-valued graph against central
/// differences, for every input, and reports the worst relative error.
GradCheckEntry check_one(const std::string& name, const std::vector<Tensor<double>>& inputs,
                         const Builder& build, double tol = 1e-4) {
    T tape;
    std::vector<Id> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) ids.push_back(tape.input(in, true));
    const Id loss = build(tape, ids);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t w = 0; w < inputs.size(); ++w) {
        const auto f = [&build](const std::vector<Tensor<double>>& xs) {
            T t2;
            std::vector<Id> xid;
            xid.reserve(xs.size());
            for (const auto& x : xs) xid.push_back(t2.input(x, false));
            return t2.val(build(t2, xid)).data[0];
        };
        const Tensor<double> numeric = finite_diff_grad(f, inputs, w);
        worst = std::max(worst, rel_error(tape.grad(ids[w]), numeric));
    }
    return {name, worst, tol, worst < tol};
}

Tensor<double> randn(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor<double> t = random_normal<double>(std::move(shape), rng);
    for (auto& v : t.data) v *= scale;
    return t;
}

/// Probes a named subset of a parameter store: analytic gradients of a
/// store-defined scalar loss against central differences, with the rest of
/// the store held fixed.
GradCheckEntry check_store(const std::string& name, const ParamStore<double>& store,
                           const std::vector<std::string>& probes,
                           const std::function<Id(T&, const BoundParams<double>&)>& build,
                           double tol = 1e-3) {
    T tape;
    const BoundParams<double> bound = bind_params(tape, store, true);
    tape.backward(build(tape, bound));

    double worst = 0.0;
    for (const auto& pname : probes) {
        const Tensor<double> analytic = tape.grad(bound.at(pname));
        const auto f = [&store, &pname, &build](const std::vector<Tensor<double>>& xs) {
            ParamStore<double> probed = store;
            probed.at(pname) = xs[0];
            T t2;
            const BoundParams<double> b2 = bind_params(t2, probed, false);
            return t2.val(build(t2, b2)).data[0];
        };
        const Tensor<double> numeric = finite_diff_grad(f, {store.at(pname)}, 0);
        worst = std::max(worst, rel_error(analytic, numeric));
    }
    return {name, worst, tol, worst < tol};
}

/// loss = mean((x - 0)^2): gives each op a non-uniform upstream gradient.
Id sq_mean(T& t, Id x) { return t.mse(x, t.constant(Tensor<double>(t.val(x).shape))); }

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradCheckEntry> out;
    auto rng_for = [seed](const char* label) { return make_rng(seed, label); };

    {
        auto r = rng_for("add");
        out.push_back(check_one("add", {randn(r, {2, 3, 4}), randn(r, {2, 3, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.add(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("add_suffix_broadcast");
        out.push_back(check_one("add_suffix_broadcast", {randn(r, {2, 3, 4}), randn(r, {3, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.add(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("sub");
        out.push_back(check_one("sub", {randn(r, {3, 5}), randn(r, {3, 5})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.sub(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("mul");
        out.push_back(check_one("mul", {randn(r, {2, 6}), randn(r, {2, 6})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.mul(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("mul_suffix_broadcast");
        out.push_back(check_one("mul_suffix_broadcast", {randn(r, {2, 3, 4}), randn(r, {4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.mul(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("scale");
        out.push_back(check_one("scale", {randn(r, {7})}, [](T& t, const std::vector<Id>& in) {
            return sq_mean(t, t.scale(in[0], -2.5));
        }));
    }
    {
        auto r = rng_for("sigmoid");
        out.push_back(check_one("sigmoid", {randn(r, {3, 4}, 2.0)},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.sigmoid(in[0]));
                                }));
    }
    {
        auto r = rng_for("gelu");
        out.push_back(check_one("gelu", {randn(r, {3, 4}, 2.0)},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.gelu(in[0]));
                                }));
    }
    {
        auto r = rng_for("matmul_2d");
        out.push_back(check_one("matmul_2d", {randn(r, {3, 4}), randn(r, {4, 5})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.matmul(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("matmul_batched");
        out.push_back(check_one("matmul_batched", {randn(r, {2, 3, 4}), randn(r, {2, 4, 5})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.matmul(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("matmul_broadcast_rhs");
        out.push_back(check_one("matmul_broadcast_rhs", {randn(r, {2, 3, 4}), randn(r, {4, 5})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.matmul(in[0], in[1]));
                                }));
    }
    {
        auto r = rng_for("softmax_lastaxis");
        out.push_back(check_one("softmax_lastaxis", {randn(r, {3, 6}, 2.0)},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.softmax_lastaxis(in[0]));
                                }));
    }
    {
        auto r = rng_for("layer_norm");
        out.push_back(check_one(
            "layer_norm", {randn(r, {4, 8}), randn(r, {8}), randn(r, {8})},
            [](T& t, const std::vector<Id>& in) {
                return sq_mean(t, t.layer_norm(in[0], in[1], in[2]));
            }));
    }
    {
        auto r = rng_for("reshape");
        out.push_back(check_one("reshape", {randn(r, {2, 3, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.mul(t.reshape(in[0], {4, 6}),
                                                            t.constant(Tensor<double>::arange({4, 6}))));
                                }));
    }
    {
        auto r = rng_for("permute");
        out.push_back(check_one("permute", {randn(r, {2, 3, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.mul(t.permute(in[0], {2, 0, 1}),
                                                            t.constant(Tensor<double>::arange({4, 2, 3}))));
                                }));
    }
    {
        auto r = rng_for("slice");
        out.push_back(check_one("slice", {randn(r, {2, 5, 3})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.slice(in[0], 1, 1, 4));
                                }));
    }
    {
        auto r = rng_for("concat");
        out.push_back(check_one("concat", {randn(r, {2, 2, 3}), randn(r, {2, 1, 3})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.concat({in[0], in[1]}, 1));
                                }));
    }
    {
        auto r = rng_for("expand1");
        out.push_back(check_one("expand1", {randn(r, {2, 1, 3})},
                                [](T& t, const std::vector<Id>& in) {
                                    return sq_mean(t, t.mul(t.expand1(in[0], 1, 4),
                                                            t.constant(Tensor<double>::arange({2, 4, 3}))));
                                }));
    }
    {
        auto r = rng_for("embed");
        out.push_back(check_one("embed", {randn(r, {7, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    // repeated ids exercise gradient accumulation per row
                                    return sq_mean(t, t.embed(in[0], {0, 3, 3, 6, 1}, {5}));
                                }));
    }
    {
        auto r = rng_for("mse");
        out.push_back(check_one("mse", {randn(r, {3, 4}), randn(r, {3, 4})},
                                [](T& t, const std::vector<Id>& in) {
                                    return t.mse(in[0], in[1]);
                                }));
    }
    {
        auto r = rng_for("mse_masked");
        Tensor<double> mask({3, 4});
        for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = (r.below(3) != 0) ? 1.0 : 0.0;
        mask.data[0] = 1.0;  // never empty
        out.push_back(check_one("mse_masked", {randn(r, {3, 4}), randn(r, {3, 4})},
                                [mask](T& t, const std::vector<Id>& in) {
                                    return t.mse_masked(in[0], in[1], mask);
                                }));
    }
    {
        auto r = rng_for("sum");
        out.push_back(check_one("sum", {randn(r, {2, 5})}, [](T& t, const std::vector<Id>& in) {
            return t.scale(t.sum(t.mul(in[0], in[0])), 0.1);
        }));
    }
    {
        // End to end, phase-1 form: unmasked flow-matching loss through the
        // bare backbone, with a live output head so every path carries signal.
        const DiTConfig cfg = DiTConfig::tiny();
        ParamStore<double> store = cast_store<float, double>(init_backbone(cfg, seed));
        auto r = rng_for("model_plain");
        store.at("backbone.head.w") = randn(r, {cfg.d_model, cfg.patch_dim()}, 0.2);
        store.at("backbone.head.b") = randn(r, {cfg.patch_dim()}, 0.05);

        const Shape vid{2, 2, cfg.channels, cfg.image_size, cfg.image_size};
        const Tensor<double> x1 = random_uniform<double>(vid, r, 0.0, 1.0);
        const Tensor<double> x0 = randn(r, vid);
        const FlowSample<double> fs = interpolate(x0, x1, 0.35);
        const Tensor<double> xt = fs.xt;
        const Tensor<double> u = fs.u;
        const std::vector<double> times = {0.35, 0.35};
        const std::vector<std::vector<std::int64_t>> prompts = {{3, 5, 7}, {2, 9}};
        out.push_back(check_store(
            "model_plain_fm", store,
            {"backbone.head.b", "backbone.block0.attn3d.wq", "backbone.patch.b",
             "backbone.time.b2"},
            [&](T& t, const BoundParams<double>& bp) {
                const Id x = t.input(xt);
                return fm_loss(t, backbone_forward(t, cfg, bp, x, times, prompts).velocity, u);
            }));
    }
    {
        // End to end, phase-2 form: target-stream-masked loss through the
        // adapted model in full mode. The normally zero fusion linears get
        // small random values so the gate and difference paths are all live.
        const DiTConfig cfg = DiTConfig::tiny();
        ParamStore<float> f32 = init_backbone(cfg, seed + 1);
        attach_pu_params(f32, cfg, seed + 2);
        ParamStore<double> store = cast_store<float, double>(f32);
        auto r = rng_for("model_edit");
        store.at("backbone.head.w") = randn(r, {cfg.d_model, cfg.patch_dim()}, 0.2);
        for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
            const std::string b = "pu.block" + std::to_string(blk) + ".";
            for (const char* nm : {"zlin1.w", "zlin2.w"})
                store.at(b + nm) = randn(r, {cfg.d_model, cfg.d_model}, 0.1);
            for (const char* nm : {"zlin1.b", "zlin2.b", "gate_proj.b1", "gate_proj.b2"})
                store.at(b + nm) = randn(r, {cfg.d_model}, 0.05);
        }

        const Shape half{1, 2, cfg.channels, cfg.image_size, cfg.image_size};
        const Tensor<double> x1_src = random_uniform<double>(half, r, 0.0, 1.0);
        const Tensor<double> x1_edit = random_uniform<double>(half, r, 0.0, 1.0);
        const Tensor<double> x0 = randn(r, half);
        const FlowSample<double> fs = interpolate(x0, x1_edit, 0.45);

        Tensor<double> stacked({2, 2, cfg.channels, cfg.image_size, cfg.image_size});
        std::copy(x1_src.data.begin(), x1_src.data.end(), stacked.data.begin());
        std::copy(fs.xt.data.begin(), fs.xt.data.end(),
                  stacked.data.begin() + static_cast<std::ptrdiff_t>(x1_src.size()));
        Tensor<double> u_full = Tensor<double>::zeros(stacked.shape);
        std::copy(fs.u.data.begin(), fs.u.data.end(),
                  u_full.data.begin() + static_cast<std::ptrdiff_t>(x1_src.size()));
        const Tensor<double> mask = target_stream_mask<double>(stacked.shape);
        const std::vector<double> times = {1.0, 0.45};
        const std::vector<std::vector<std::int64_t>> prompts = {{3, 5, 7}, {2, 9, 11}};
        const Tensor<double> stacked_c = stacked;
        const Tensor<double> u_c = u_full;
        out.push_back(check_store(
            "model_edit_fm_masked", store,
            {"pu.block0.attn2d_1.wq", "pu.block0.zlin1.b", "pu.block0.zlin2.w",
             "pu.block1.gate_proj.b2", "pu.block0.ln2.g"},
            [&](T& t, const BoundParams<double>& bp) {
                const Id x = t.input(stacked_c);
                const auto ef = edit_forward(t, cfg, bp, x, times, prompts, AblationMode::Full);
                return fm_loss_masked(t, ef.fwd.velocity, u_c, mask);
            }));
    }
    {
        auto r = rng_for("mlp_chain");
        out.push_back(check_one(
            "mlp_chain",
            {randn(r, {2, 8}), randn(r, {8, 16}, 0.3), randn(r, {16}), randn(r, {16, 8}, 0.3),
             randn(r, {8}), randn(r, {8}), randn(r, {8}), randn(r, {2, 8})},
            [](T& t, const std::vector<Id>& in) {
                Id h = t.gelu(t.add(t.matmul(in[0], in[1]), in[2]));
                h = t.add(t.matmul(h, in[3]), in[4]);
                h = t.layer_norm(h, in[5], in[6]);
                return t.mse(h, in[7]);
            }));
    }

    return out;
}

bool gradcheck_all_pass(const std::vector<GradCheckEntry>& entries) {
    return std::all_of(entries.begin(), entries.end(),
                       [](const GradCheckEntry& e) { return e.pass; });
}

}  // namespace ive
