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

#include "ive/predict_update.hpp"

#include <cmath>

#include "ive/rng.hpp"

namespace ive {

AblationMode parse_mode(const std::string& name) {
    if (name == "full") return AblationMode::Full;
    if (name == "no-text-gate") return AblationMode::NoTextGate;
    if (name == "no-update") return AblationMode::NoUpdate;
    if (name == "naive-parallel-2d") return AblationMode::NaiveParallel2D;
    throw InvalidMode("unknown ablation mode: " + name);
}

std::string to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::Full: return "full";
        case AblationMode::NoTextGate: return "no-text-gate";
        case AblationMode::NoUpdate: return "no-update";
        case AblationMode::NaiveParallel2D: return "naive-parallel-2d";
    }
    throw InvalidMode("unrepresentable ablation mode");
}

template <class S>
PUParams<S> pu_params_at(const BoundParams<S>& bp, std::size_t block, std::size_t heads) {
    const std::string b = "pu.block" + std::to_string(block) + ".";
    PUParams<S> p;
    p.ln1 = bp.ln_at(b + "ln1");
    p.ln2 = bp.ln_at(b + "ln2");
    p.ln3 = bp.ln_at(b + "ln3");
    p.attn2d_1 = bp.mha_at(b + "attn2d_1", heads);
    p.attn2d_2 = bp.mha_at(b + "attn2d_2", heads);
    p.xattn_gate = bp.mha_at(b + "xattn_gate", heads);
    p.pos2d = bp.at(b + "pos2d");
    p.zlin1 = bp.zlin_at(b + "zlin1");
    p.zlin2 = bp.zlin_at(b + "zlin2");
    p.gate_proj = bp.gate_at(b + "gate_proj");
    return p;
}

void attach_pu_params(ParamStore<float>& store, const DiTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));

    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string host = "backbone.block" + std::to_string(i) + ".";
        const std::string b = "pu.block" + std::to_string(i) + ".";
        if (store.has(b + "ln1.g"))
            throw IncompatibleShapes("adapter parameters already attached");

        // Weight inheritance: bitwise copies of the host block's attention.
        for (const char* leaf : {".wq", ".wk", ".wv", ".wo"}) {
            const std::string a3 = host + "attn3d" + leaf;
            const std::string xa = host + "xattn" + leaf;
            if (!store.has(a3) || !store.has(xa))
                throw IncompatibleShapes("store lacks backbone attention tensors for block " +
                                         std::to_string(i));
            if (store.at(a3).shape != Shape{d, d} || store.at(xa).shape != Shape{d, d})
                throw IncompatibleShapes("backbone attention tensors have unexpected shape");
            store.add(b + "attn2d_1" + leaf, store.at(a3), false);
            store.add(b + "attn2d_2" + leaf, store.at(a3), false);
            store.add(b + "xattn_gate" + leaf, store.at(xa), false);
        }
        for (const char* ln : {"ln1", "ln2", "ln3"}) {
            store.add(b + ln + ".g", Tensor<float>::ones({d}), false);
            store.add(b + ln + ".b", Tensor<float>::zeros({d}), false);
        }
        store.add(b + "pos2d", Tensor<float>::zeros({cfg.grid_h(), 2 * cfg.grid_w(), d}), false);
        store.add(b + "zlin1.w", Tensor<float>::zeros({d, d}), false);
        store.add(b + "zlin1.b", Tensor<float>::zeros({d}), false);
        store.add(b + "zlin2.w", Tensor<float>::zeros({d, d}), false);
        store.add(b + "zlin2.b", Tensor<float>::zeros({d}), false);
        {
            auto rng1 = make_rng(seed, b + "gate_proj.w1");
            auto rng2 = make_rng(seed, b + "gate_proj.w2");
            store.add(b + "gate_proj.w1", random_normal<float>({d, d}, rng1,
                                                               static_cast<float>(sd)), false);
            store.add(b + "gate_proj.b1", Tensor<float>::zeros({d}), false);
            store.add(b + "gate_proj.w2", random_normal<float>({d, d}, rng2,
                                                               static_cast<float>(sd)), false);
            store.add(b + "gate_proj.b2", Tensor<float>::zeros({d}), false);
        }
    }

    for (const auto& [name, tensor] : store.tensors)
        if (name.rfind("backbone.", 0) == 0) store.frozen.insert(name);
}

bool pu_param_in_mode(const std::string& name, AblationMode mode) {
    auto has = [&](const char* piece) { return name.find(piece) != std::string::npos; };
    switch (mode) {
        case AblationMode::Full:
        case AblationMode::NaiveParallel2D:
            return true;
        case AblationMode::NoTextGate:
            return !(has(".ln3.") || has(".xattn_gate.") || has(".gate_proj."));
        case AblationMode::NoUpdate:
            return !(has(".ln2.") || has(".ln3.") || has(".attn2d_2.") || has(".zlin2.") ||
                     has(".xattn_gate.") || has(".gate_proj."));
    }
    throw InvalidMode("unrepresentable ablation mode");
}

template <class S>
SeqMap<S> attn2d_map(const MhaParams<S>& attn, typename Tape<S>::Id pos2d) {
    return [attn, pos2d](Tape<S>& t, typename Tape<S>::Id seq) {
        const Shape ps = t.val(pos2d).shape;  // copy: later ops may reallocate
        if (ps.size() != 3)
            throw ShapeMismatch("position table must be [H,2W,d], got " + shape_str(ps));
        auto flat = t.reshape(pos2d, {ps[0] * ps[1], ps[2]});
        auto embedded = t.add(seq, flat);
        return mha(t, embedded, embedded, attn);
    };
}

template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> predict_stage(Tape<S>& t,
                                                                    typename Tape<S>::Id x,
                                                                    typename Tape<S>::Id h3d,
                                                                    const TokenGrid& g,
                                                                    const PUParams<S>& p) {
    expect_stacked(t, x, g);
    if (t.val(h3d).shape != t.val(x).shape)
        throw ShapeMismatch("h3d must match the block input shape");
    auto h2d = phi(t, layer_norm(t, x, p.ln1), g, attn2d_map<S>(p.attn2d_1, p.pos2d));
    auto h_pred = t.add(h3d, zero_linear(t, h2d, p.zlin1));
    return {h_pred, h2d};
}

template <class S>
UpdateOut<S> update_stage(Tape<S>& t, typename Tape<S>::Id h_pred, typename Tape<S>::Id h_2d,
                          const TokenGrid& g, const PUParams<S>& p) {
    if (t.val(h_pred).shape != t.val(h_2d).shape)
        throw ShapeMismatch("update stage inputs must agree in shape");
    UpdateOut<S> out;
    out.h_res = t.sub(h_pred, h_2d);
    out.h_diff = phi(t, layer_norm(t, out.h_res, p.ln2), g, attn2d_map<S>(p.attn2d_2, p.pos2d));
    return out;
}

template <class S>
typename Tape<S>::Id semantic_gate(Tape<S>& t, typename Tape<S>::Id h_diff,
                                   typename Tape<S>::Id prompt_embed, const PUParams<S>& p) {
    const Shape ps = t.val(prompt_embed).shape;
    if (ps.size() != 3) throw ShapeMismatch("gate context must be [N,L,d], got " + shape_str(ps));
    if (ps[1] == 0) throw MissingPrompt("gate context has no tokens");
    auto ctx = mha(t, layer_norm(t, h_diff, p.ln3), prompt_embed, p.xattn_gate);
    return gate_project(t, ctx, p.gate_proj);
}

template <class S>
typename Tape<S>::Id fuse(Tape<S>& t, typename Tape<S>::Id h_pred, typename Tape<S>::Id h_diff,
                          typename Tape<S>::Id gate, const PUParams<S>& p) {
    return t.add(h_pred, t.mul(gate, zero_linear(t, h_diff, p.zlin2)));
}

template <class S>
PUOut<S> pu_forward(Tape<S>& t, typename Tape<S>::Id x, typename Tape<S>::Id h3d,
                    const TokenGrid& g, typename Tape<S>::Id prompt_embed, AblationMode mode,
                    const PUParams<S>& p) {
    PUOut<S> out;
    switch (mode) {
        case AblationMode::Full: {
            auto [h_pred, h_2d] = predict_stage(t, x, h3d, g, p);
            auto up = update_stage(t, h_pred, h_2d, g, p);
            out.gate = semantic_gate(t, up.h_diff, prompt_embed, p);
            out.has_gate = true;
            out.h_update = fuse(t, h_pred, up.h_diff, out.gate, p);
            return out;
        }
        case AblationMode::NoTextGate: {
            auto [h_pred, h_2d] = predict_stage(t, x, h3d, g, p);
            auto up = update_stage(t, h_pred, h_2d, g, p);
            const Shape sh = t.val(up.h_diff).shape;
            out.gate = t.constant(Tensor<S>::ones(sh));
            out.has_gate = true;
            out.h_update = fuse(t, h_pred, up.h_diff, out.gate, p);
            return out;
        }
        case AblationMode::NoUpdate: {
            auto [h_pred, h_2d] = predict_stage(t, x, h3d, g, p);
            (void)h_2d;
            out.h_update = h_pred;
            return out;
        }
        case AblationMode::NaiveParallel2D: {
            expect_stacked(t, x, g);
            auto d1 = phi(t, layer_norm(t, x, p.ln1), g, attn2d_map<S>(p.attn2d_1, p.pos2d));
            auto d2 = phi(t, layer_norm(t, x, p.ln2), g, attn2d_map<S>(p.attn2d_2, p.pos2d));
            auto diff = t.sub(d2, d1);
            out.gate = semantic_gate(t, diff, prompt_embed, p);
            out.has_gate = true;
            auto base = t.add(h3d, zero_linear(t, d1, p.zlin1));
            out.h_update = t.add(base, t.mul(out.gate, zero_linear(t, diff, p.zlin2)));
            return out;
        }
    }
    throw InvalidMode("unrepresentable ablation mode");
}

template <class S>
typename Tape<S>::Id gate_context(Tape<S>& t, typename Tape<S>::Id prompt_ctx,
                                  std::size_t pairs) {
    const Shape sh = t.val(prompt_ctx).shape;
    if (sh.size() != 3 || sh[0] != 2 * pairs)
        throw ShapeMismatch("prompt context must be [2B,L,d] with B=" + std::to_string(pairs) +
                            ", got " + shape_str(sh));
    auto tgt = t.slice(prompt_ctx, 0, pairs, 2 * pairs);
    return t.concat({tgt, tgt}, 0);
}

template <class S>
BlockAdapter<S> make_pu_adapter(const DiTConfig& cfg, const BoundParams<S>& bp, AblationMode mode,
                                std::size_t pairs, AdapterTaps<S>* taps) {
    return [cfg, bp, mode, pairs, taps](Tape<S>& t, std::size_t block, typename Tape<S>::Id x_in,
                                        typename Tape<S>::Id h3d, typename Tape<S>::Id ctx) {
        const Shape xs = t.val(x_in).shape;
        const std::size_t tf = cfg.tokens_per_frame();
        if (xs.size() != 3 || xs[0] != 2 * pairs || xs[1] % tf != 0)
            throw ShapeMismatch("adapter expects stacked [2B,F·h·w,d], got " + shape_str(xs));
        TokenGrid g{pairs, xs[1] / tf, cfg.grid_h(), cfg.grid_w(), cfg.d_model};
        auto p = pu_params_at<S>(bp, block, cfg.heads);
        auto gctx = gate_context(t, ctx, pairs);
        auto out = pu_forward(t, x_in, h3d, g, gctx, mode, p);
        if (taps && out.has_gate) taps->gates.push_back(out.gate);
        return out.h_update;
    };
}

template <class S>
EditForward<S> edit_forward(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                            typename Tape<S>::Id stacked, const std::vector<double>& times,
                            const std::vector<std::vector<std::int64_t>>& prompts,
                            AblationMode mode) {
    const Shape sh = t.val(stacked).shape;
    if (sh.size() != 5 || sh[0] == 0 || sh[0] % 2 != 0)
        throw ShapeMismatch("edit forward needs a stacked [2B,F,C,H,W] batch, got " +
                            shape_str(sh));
    EditForward<S> out;
    auto adapter = make_pu_adapter<S>(cfg, bp, mode, sh[0] / 2, &out.taps);
    out.fwd = backbone_forward(t, cfg, bp, stacked, times, prompts, adapter);
    return out;
}

#define IVE_INSTANTIATE(S)                                                                        \
    template PUParams<S> pu_params_at<S>(const BoundParams<S>&, std::size_t, std::size_t);       \
    template SeqMap<S> attn2d_map<S>(const MhaParams<S>&, Tape<S>::Id);                           \
    template std::pair<Tape<S>::Id, Tape<S>::Id> predict_stage<S>(                               \
        Tape<S>&, Tape<S>::Id, Tape<S>::Id, const TokenGrid&, const PUParams<S>&);               \
    template UpdateOut<S> update_stage<S>(Tape<S>&, Tape<S>::Id, Tape<S>::Id, const TokenGrid&,  \
                                          const PUParams<S>&);                                   \
    template Tape<S>::Id semantic_gate<S>(Tape<S>&, Tape<S>::Id, Tape<S>::Id,                    \
                                          const PUParams<S>&);                                   \
    template Tape<S>::Id fuse<S>(Tape<S>&, Tape<S>::Id, Tape<S>::Id, Tape<S>::Id,                \
                                 const PUParams<S>&);                                            \
    template PUOut<S> pu_forward<S>(Tape<S>&, Tape<S>::Id, Tape<S>::Id, const TokenGrid&,        \
                                    Tape<S>::Id, AblationMode, const PUParams<S>&);              \
    template Tape<S>::Id gate_context<S>(Tape<S>&, Tape<S>::Id, std::size_t);                    \
    template BlockAdapter<S> make_pu_adapter<S>(const DiTConfig&, const BoundParams<S>&,         \
                                                AblationMode, std::size_t, AdapterTaps<S>*);     \
    template EditForward<S> edit_forward<S>(Tape<S>&, const DiTConfig&, const BoundParams<S>&,   \
                                            Tape<S>::Id, const std::vector<double>&,             \
                                            const std::vector<std::vector<std::int64_t>>&,       \
                                            AblationMode);

IVE_INSTANTIATE(float)
IVE_INSTANTIATE(double)
#undef IVE_INSTANTIATE

}  // namespace ive
