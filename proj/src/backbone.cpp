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

#include "ive/backbone.hpp"

#include <cmath>
#include <string>

#include "ive/attention.hpp"
#include "ive/rng.hpp"

namespace ive {

void DiTConfig::validate() const {
    if (image_size == 0 || patch == 0 || image_size % patch != 0)
        throw DomainError("patch size must divide the image size");
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
        throw DomainError("model width must be divisible by the head count");
    if (d_model % 2 != 0) throw DomainError("model width must be even for sinusoidal features");
    if (channels == 0 || frames_max == 0 || blocks == 0 || prompt_len == 0)
        throw DomainError("all extents must be positive");
    if (vocab < 2) throw DomainError("vocabulary must hold PAD plus at least one token");
}

DiTConfig DiTConfig::tiny() {
    DiTConfig cfg;
    cfg.image_size = 4;
    cfg.patch = 2;
    cfg.frames_max = 2;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.vocab = 16;
    cfg.prompt_len = 4;
    return cfg;
}

void validate_prompt(const std::vector<std::int64_t>& ids, const DiTConfig& cfg) {
    if (ids.empty()) throw MissingPrompt("prompt has no tokens");
    if (ids.size() > cfg.prompt_len)
        throw ShapeMismatch("prompt of " + std::to_string(ids.size()) + " tokens exceeds length " +
                            std::to_string(cfg.prompt_len));
    bool in_pad = false, any_content = false;
    for (std::int64_t id : ids) {
        if (id < 0 || id >= static_cast<std::int64_t>(cfg.vocab))
            throw DomainError("prompt token " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(cfg.vocab));
        if (id == kPadToken) {
            in_pad = true;
        } else {
            if (in_pad) throw DomainError("PAD tokens must form a suffix");
            any_content = true;
        }
    }
    if (!any_content) throw MissingPrompt("prompt is all padding");
}

namespace {

Tensor<float> init_tensor(const Shape& sh, std::uint64_t seed, const std::string& name,
                          double stddev) {
    if (stddev == 0.0) return Tensor<float>::zeros(sh);
    auto rng = make_rng(seed, name);
    return random_normal<float>(sh, rng, static_cast<float>(stddev));
}

}  // namespace

ParamStore<float> init_backbone(const DiTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<float> s;
    const std::size_t d = cfg.d_model, pd = cfg.patch_dim(), hidden = cfg.mlp_hidden();
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    // Residual-branch output projections are shrunk with depth so the stream
    // variance stays near its input scale at initialization.
    const double res = sd / std::sqrt(2.0 * static_cast<double>(cfg.blocks));

    auto add = [&](const std::string& name, const Shape& sh, double stddev) {
        s.add(name, init_tensor(sh, seed, name, stddev), false);
    };

    add("backbone.patch.w", {pd, d}, 1.0 / std::sqrt(static_cast<double>(pd)));
    add("backbone.patch.b", {d}, 0.0);
    add("backbone.pos_spatial", {cfg.tokens_per_frame(), d}, 0.02);
    // Frame rows start at exactly zero: rows beyond the frame counts seen in
    // training never receive gradient and therefore stay null contributions.
    add("backbone.pos_frame", {cfg.frames_max, d}, 0.0);
    add("backbone.time.w1", {d, d}, sd);
    add("backbone.time.b1", {d}, 0.0);
    add("backbone.time.w2", {d, d}, sd);
    add("backbone.time.b2", {d}, 0.0);
    add("backbone.prompt.table", {cfg.vocab, d}, sd);
    add("backbone.prompt.pos", {cfg.prompt_len, d}, 0.02);

    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string b = "backbone.block" + std::to_string(i) + ".";
        for (const char* ln : {"ln_attn", "ln_xattn", "ln_mlp"}) {
            s.add(b + ln + ".g", Tensor<float>::ones({d}), false);
            s.add(b + ln + ".b", Tensor<float>::zeros({d}), false);
        }
        for (const char* attn : {"attn3d", "xattn"}) {
            add(b + attn + ".wq", {d, d}, sd);
            add(b + attn + ".wk", {d, d}, sd);
            add(b + attn + ".wv", {d, d}, sd);
            add(b + attn + ".wo", {d, d}, res);
        }
        add(b + "mlp.w1", {d, hidden}, sd);
        add(b + "mlp.b1", {hidden}, 0.0);
        add(b + "mlp.w2", {hidden, d}, res);
        add(b + "mlp.b2", {d}, 0.0);
    }

    s.add("backbone.final_ln.g", Tensor<float>::ones({d}), false);
    s.add("backbone.final_ln.b", Tensor<float>::zeros({d}), false);
    // Zero head: the freshly built model predicts the zero velocity field.
    add("backbone.head.w", {d, pd}, 0.0);
    add("backbone.head.b", {pd}, 0.0);
    return s;
}

Tensor<double> time_features(double tval, std::size_t dim) {
    if (!std::isfinite(tval) || tval < 0.0 || tval > 1.0)
        throw DomainError("diffusion time must lie in [0,1]");
    if (dim % 2 != 0) throw DomainError("time feature width must be even");
    const std::size_t half = dim / 2;
    Tensor<double> out = Tensor<double>::zeros({dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double expo = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
        const double arg = 1000.0 * tval * std::pow(10000.0, -expo);
        out.data[i] = std::sin(arg);
        out.data[half + i] = std::cos(arg);
    }
    return out;
}

template <class S>
typename Tape<S>::Id patchify(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                              typename Tape<S>::Id video) {
    cfg.validate();
    const Shape sh = t.val(video).shape;
    if (sh.size() != 5 || sh[2] != cfg.channels || sh[3] != cfg.image_size ||
        sh[4] != cfg.image_size)
        throw ShapeMismatch("patchify expects [N,F," + std::to_string(cfg.channels) + "," +
                            std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                            "], got " + shape_str(sh));
    const std::size_t N = sh[0], F = sh[1], C = cfg.channels, p = cfg.patch;
    const std::size_t gh = cfg.grid_h(), gw = cfg.grid_w(), tf = cfg.tokens_per_frame();
    if (F == 0 || F > cfg.frames_max)
        throw ShapeMismatch("frame count " + std::to_string(F) + " outside [1," +
                            std::to_string(cfg.frames_max) + "]");

    auto split = t.reshape(video, {N, F, C, gh, p, gw, p});
    auto grouped = t.permute(split, {0, 1, 3, 5, 2, 4, 6});  // [N,F,gh,gw,C,p,p]
    auto flat = t.reshape(grouped, {N, F * tf, cfg.patch_dim()});
    auto tokens = t.add(t.matmul(flat, bp.at("backbone.patch.w")), bp.at("backbone.patch.b"));

    const std::size_t d = cfg.d_model;
    auto pos_sp = t.reshape(
        t.expand1(t.reshape(bp.at("backbone.pos_spatial"), {1, tf, d}), 0, F), {F * tf, d});
    auto pos_fr = t.reshape(
        t.expand1(t.reshape(t.slice(bp.at("backbone.pos_frame"), 0, 0, F), {F, 1, d}), 1, tf),
        {F * tf, d});
    return t.add(t.add(tokens, pos_sp), pos_fr);
}

template <class S>
typename Tape<S>::Id unpatchify(Tape<S>& t, const DiTConfig& cfg, typename Tape<S>::Id tokens,
                                std::size_t frames) {
    const Shape sh = t.val(tokens).shape;
    const std::size_t tf = cfg.tokens_per_frame();
    if (sh.size() != 3 || sh[1] != frames * tf || sh[2] != cfg.patch_dim())
        throw ShapeMismatch("unpatchify expects [N," + std::to_string(frames * tf) + "," +
                            std::to_string(cfg.patch_dim()) + "], got " + shape_str(sh));
    const std::size_t N = sh[0], p = cfg.patch;
    auto grouped = t.reshape(tokens, {N, frames, cfg.grid_h(), cfg.grid_w(), cfg.channels, p, p});
    auto split = t.permute(grouped, {0, 1, 4, 2, 5, 3, 6});  // [N,F,C,gh,p,gw,p]
    return t.reshape(split, {N, frames, cfg.channels, cfg.image_size, cfg.image_size});
}

template <class S>
typename Tape<S>::Id time_embed(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                const std::vector<double>& times) {
    if (times.empty()) throw ShapeMismatch("time_embed needs at least one sample");
    Tensor<double> feats = Tensor<double>::zeros({times.size(), cfg.d_model});
    for (std::size_t n = 0; n < times.size(); ++n) {
        Tensor<double> row = time_features(times[n], cfg.d_model);
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            feats.data[n * cfg.d_model + j] = row.data[j];
    }
    auto x = t.constant(feats.template cast<S>());
    auto h = t.gelu(t.add(t.matmul(x, bp.at("backbone.time.w1")), bp.at("backbone.time.b1")));
    return t.add(t.matmul(h, bp.at("backbone.time.w2")), bp.at("backbone.time.b2"));
}

template <class S>
typename Tape<S>::Id embed_prompts(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                   const std::vector<std::vector<std::int64_t>>& prompts) {
    if (prompts.empty()) throw MissingPrompt("no prompts supplied");
    std::vector<std::int64_t> ids;
    ids.reserve(prompts.size() * cfg.prompt_len);
    for (const auto& pr : prompts) {
        validate_prompt(pr, cfg);
        for (std::size_t j = 0; j < cfg.prompt_len; ++j)
            ids.push_back(j < pr.size() ? pr[j] : kPadToken);
    }
    auto emb = t.embed(bp.at("backbone.prompt.table"), ids, {prompts.size(), cfg.prompt_len});
    return t.add(emb, bp.at("backbone.prompt.pos"));
}

template <class S>
ForwardResult<S> backbone_forward(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                  typename Tape<S>::Id video, const std::vector<double>& times,
                                  const std::vector<std::vector<std::int64_t>>& prompts,
                                  const BlockAdapter<S>& adapter) {
    const Shape sh = t.val(video).shape;
    if (sh.size() != 5) throw ShapeMismatch("backbone expects [N,F,C,H,W], got " + shape_str(sh));
    const std::size_t N = sh[0], F = sh[1];
    if (times.size() != N)
        throw ShapeMismatch("got " + std::to_string(times.size()) + " times for " +
                            std::to_string(N) + " samples");
    if (prompts.size() != N) throw MissingPrompt("need one prompt per sample");

    auto tokens = patchify(t, cfg, bp, video);
    {
        const Shape ts = t.val(tokens).shape;
        auto temb = t.expand1(t.reshape(time_embed(t, cfg, bp, times), {N, 1, cfg.d_model}), 1,
                              ts[1]);
        tokens = t.add(tokens, temb);
    }
    auto ctx = embed_prompts(t, cfg, bp, prompts);

    ForwardResult<S> out;
    out.prompt_ctx = ctx;
    out.taps.reserve(cfg.blocks);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        const std::string b = "backbone.block" + std::to_string(i) + ".";
        auto x_in = tokens;
        auto normed = layer_norm(t, x_in, bp.ln_at(b + "ln_attn"));
        auto h3d = mha(t, normed, normed, bp.mha_at(b + "attn3d", cfg.heads));
        out.taps.push_back({x_in, h3d});
        auto residual = adapter ? adapter(t, i, x_in, h3d, ctx) : h3d;
        auto x1 = t.add(x_in, residual);
        auto x2 = t.add(x1, mha(t, layer_norm(t, x1, bp.ln_at(b + "ln_xattn")), ctx,
                                bp.mha_at(b + "xattn", cfg.heads)));
        auto m = layer_norm(t, x2, bp.ln_at(b + "ln_mlp"));
        m = t.gelu(t.add(t.matmul(m, bp.at(b + "mlp.w1")), bp.at(b + "mlp.b1")));
        m = t.add(t.matmul(m, bp.at(b + "mlp.w2")), bp.at(b + "mlp.b2"));
        tokens = t.add(x2, m);
    }

    auto final = layer_norm(t, tokens, bp.ln_at("backbone.final_ln"));
    auto patches = t.add(t.matmul(final, bp.at("backbone.head.w")), bp.at("backbone.head.b"));
    out.velocity = unpatchify(t, cfg, patches, F);
    return out;
}

template Tape<float>::Id patchify<float>(Tape<float>&, const DiTConfig&, const BoundParams<float>&,
                                         Tape<float>::Id);
template Tape<double>::Id patchify<double>(Tape<double>&, const DiTConfig&,
                                           const BoundParams<double>&, Tape<double>::Id);
template Tape<float>::Id unpatchify<float>(Tape<float>&, const DiTConfig&, Tape<float>::Id,
                                           std::size_t);
template Tape<double>::Id unpatchify<double>(Tape<double>&, const DiTConfig&, Tape<double>::Id,
                                             std::size_t);
template Tape<float>::Id time_embed<float>(Tape<float>&, const DiTConfig&,
                                           const BoundParams<float>&, const std::vector<double>&);
template Tape<double>::Id time_embed<double>(Tape<double>&, const DiTConfig&,
                                             const BoundParams<double>&,
                                             const std::vector<double>&);
template Tape<float>::Id embed_prompts<float>(Tape<float>&, const DiTConfig&,
                                              const BoundParams<float>&,
                                              const std::vector<std::vector<std::int64_t>>&);
template Tape<double>::Id embed_prompts<double>(Tape<double>&, const DiTConfig&,
                                                const BoundParams<double>&,
                                                const std::vector<std::vector<std::int64_t>>&);
template ForwardResult<float> backbone_forward<float>(Tape<float>&, const DiTConfig&,
                                                      const BoundParams<float>&, Tape<float>::Id,
                                                      const std::vector<double>&,
                                                      const std::vector<std::vector<std::int64_t>>&,
                                                      const BlockAdapter<float>&);
template ForwardResult<double> backbone_forward<double>(
    Tape<double>&, const DiTConfig&, const BoundParams<double>&, Tape<double>::Id,
    const std::vector<double>&, const std::vector<std::vector<std::int64_t>>&,
    const BlockAdapter<double>&);

}  // namespace ive
