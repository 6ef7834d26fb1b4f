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

#include "ive/flow.hpp"

#include <cmath>

namespace ive {

template <class S>
FlowSample<S> interpolate(const Tensor<S>& x0, const Tensor<S>& x1, double t) {
    if (!same_shape(x0, x1))
        throw ShapeMismatch("interpolation endpoints differ: " + shape_str(x0.shape) + " vs " +
                            shape_str(x1.shape));
    if (!std::isfinite(t) || t < 0.0 || t > 1.0)
        throw DomainError("interpolation time must lie in [0,1]");
    FlowSample<S> out;
    out.x0 = x0;
    out.x1 = x1;
    out.t = t;
    out.xt = Tensor<S>(x0.shape);
    out.u = Tensor<S>(x0.shape);
    const S ts = static_cast<S>(t);
    const S os = static_cast<S>(1.0 - t);
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
        out.xt.data[i] = ts * x1.data[i] + os * x0.data[i];
        out.u.data[i] = x1.data[i] - x0.data[i];
    }
    return out;
}

template <class S>
typename Tape<S>::Id fm_loss(Tape<S>& t, typename Tape<S>::Id velocity, const Tensor<S>& u) {
    return t.mse(velocity, t.constant(u));
}

template <class S>
typename Tape<S>::Id fm_loss_masked(Tape<S>& t, typename Tape<S>::Id velocity, const Tensor<S>& u,
                                    const Tensor<S>& mask) {
    return t.mse_masked(velocity, t.constant(u), mask);
}

template <class S>
Tensor<S> target_stream_mask(const Shape& stacked_shape) {
    if (stacked_shape.empty() || stacked_shape[0] == 0 || stacked_shape[0] % 2 != 0)
        throw ShapeMismatch("stacked batches have an even leading extent, got " +
                            shape_str(stacked_shape));
    Tensor<S> mask = Tensor<S>::zeros(stacked_shape);
    const std::size_t per = mask.data.size() / stacked_shape[0];
    const std::size_t pairs = stacked_shape[0] / 2;
    for (std::size_t i = pairs * per; i < mask.data.size(); ++i) mask.data[i] = S(1);
    return mask;
}

template <class S>
Tensor<S> euler_sample(const VelocityField<S>& field, Tensor<S> x0, const SamplerConfig& cfg) {
    cfg.validate();
    const double dt = 1.0 / static_cast<double>(cfg.steps);
    Tensor<S> x = std::move(x0);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const double tk = static_cast<double>(k) * dt;
        Tensor<S> v = field(x, tk);
        if (!same_shape(v, x)) throw ShapeMismatch("velocity field changed the state shape");
        const S step = static_cast<S>(dt);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += step * v.data[i];
        if (!x.all_finite())
            throw NonFiniteState("integration diverged at step " + std::to_string(k + 1) + " of " +
                                 std::to_string(cfg.steps));
    }
    return x;
}

template <class S>
Tensor<S> plain_sample(const DiTConfig& cfg, const ParamStore<S>& store, const Tensor<S>& x0,
                       const std::vector<std::vector<std::int64_t>>& prompts,
                       const SamplerConfig& scfg) {
    if (x0.rank() != 5) throw ShapeMismatch("sampler state must be [N,F,C,H,W]");
    const std::size_t N = x0.shape[0];
    VelocityField<S> field = [&](const Tensor<S>& x, double tk) {
        Tape<S> t;
        auto bp = bind_params(t, store, false);
        std::vector<double> times(N, tk);
        auto out = backbone_forward(t, cfg, bp, t.input(x), times, prompts);
        return t.val(out.velocity);
    };
    return euler_sample(field, x0, scfg);
}

template <class S>
Tensor<S> edit_sample_batch(const DiTConfig& cfg, const ParamStore<S>& store, AblationMode mode,
                            const Tensor<S>& sources, const Tensor<S>& noise,
                            const std::vector<std::vector<std::int64_t>>& src_prompts,
                            const std::vector<std::vector<std::int64_t>>& edit_prompts,
                            const SamplerConfig& scfg) {
    if (sources.rank() != 5) throw ShapeMismatch("sources must be [B,F,C,H,W]");
    if (!same_shape(sources, noise))
        throw ShapeMismatch("noise must match the source batch shape");
    const std::size_t B = sources.shape[0];
    if (src_prompts.size() != B || edit_prompts.size() != B)
        throw MissingPrompt("need one source and one edit prompt per pair");

    std::vector<std::vector<std::int64_t>> prompts;
    prompts.reserve(2 * B);
    for (const auto& p : src_prompts) prompts.push_back(p);
    for (const auto& p : edit_prompts) prompts.push_back(p);

    Shape stacked_shape = sources.shape;
    stacked_shape[0] = 2 * B;
    const std::size_t per = sources.data.size() / B;

    VelocityField<S> field = [&](const Tensor<S>& x, double tk) {
        Tensor<S> stacked(stacked_shape);
        std::copy(sources.data.begin(), sources.data.end(), stacked.data.begin());
        std::copy(x.data.begin(), x.data.end(), stacked.data.begin() + B * per);

        std::vector<double> times(2 * B, 1.0);  // the source stream rides clean
        for (std::size_t b = 0; b < B; ++b) times[B + b] = tk;

        Tape<S> t;
        auto bp = bind_params(t, store, false);
        auto out = edit_forward(t, cfg, bp, t.input(stacked), times, prompts, mode);
        const Tensor<S> v = t.val(out.fwd.velocity);

        Tensor<S> v_target(x.shape);
        std::copy(v.data.begin() + B * per, v.data.end(), v_target.data.begin());
        return v_target;
    };
    return euler_sample(field, noise, scfg);
}

template <class S>
Tensor<S> edit_sample(const DiTConfig& cfg, const ParamStore<S>& store, AblationMode mode,
                      const Tensor<S>& source, const std::vector<std::int64_t>& src_prompt,
                      const std::vector<std::int64_t>& edit_prompt, const SamplerConfig& scfg,
                      Rng& rng) {
    if (source.rank() != 4) throw ShapeMismatch("single-pair source must be [F,C,H,W]");
    Shape batched = source.shape;
    batched.insert(batched.begin(), 1);
    Tensor<S> src(batched);
    std::copy(source.data.begin(), source.data.end(), src.data.begin());
    Tensor<S> noise = random_normal<S>(batched, rng);
    Tensor<S> out = edit_sample_batch<S>(cfg, store, mode, src, noise, {src_prompt},
                                         {edit_prompt}, scfg);
    Tensor<S> squeezed(source.shape);
    std::copy(out.data.begin(), out.data.end(), squeezed.data.begin());
    return squeezed;
}

#define IVE_INSTANTIATE(S)                                                                       \
    template FlowSample<S> interpolate<S>(const Tensor<S>&, const Tensor<S>&, double);          \
    template Tape<S>::Id fm_loss<S>(Tape<S>&, Tape<S>::Id, const Tensor<S>&);                   \
    template Tape<S>::Id fm_loss_masked<S>(Tape<S>&, Tape<S>::Id, const Tensor<S>&,             \
                                           const Tensor<S>&);                                   \
    template Tensor<S> target_stream_mask<S>(const Shape&);                                     \
    template Tensor<S> euler_sample<S>(const VelocityField<S>&, Tensor<S>, const SamplerConfig&); \
    template Tensor<S> plain_sample<S>(const DiTConfig&, const ParamStore<S>&, const Tensor<S>&, \
                                       const std::vector<std::vector<std::int64_t>>&,            \
                                       const SamplerConfig&);                                    \
    template Tensor<S> edit_sample_batch<S>(const DiTConfig&, const ParamStore<S>&,              \
                                            AblationMode, const Tensor<S>&, const Tensor<S>&,    \
                                            const std::vector<std::vector<std::int64_t>>&,       \
                                            const std::vector<std::vector<std::int64_t>>&,       \
                                            const SamplerConfig&);                               \
    template Tensor<S> edit_sample<S>(const DiTConfig&, const ParamStore<S>&, AblationMode,      \
                                      const Tensor<S>&, const std::vector<std::int64_t>&,        \
                                      const std::vector<std::int64_t>&, const SamplerConfig&,    \
                                      Rng&);

IVE_INSTANTIATE(float)
IVE_INSTANTIATE(double)
#undef IVE_INSTANTIATE

}  // namespace ive
