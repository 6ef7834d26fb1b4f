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

#pragma once

#include <functional>
#include <vector>

#include "ive/predict_update.hpp"
#include "ive/rng.hpp"

namespace ive {

/// One rectified-flow training point: the straight-line interpolant between
/// a noise draw x0 and a data point x1, with its constant target velocity.
template <class S>
struct FlowSample {
    Tensor<S> x0;  // standard-normal noise
    Tensor<S> x1;  // clean data
    double t = 0.0;
    Tensor<S> xt;  // t*x1 + (1-t)*x0
    Tensor<S> u;   // x1 - x0
};

struct SamplerConfig {
    std::size_t steps = 32;  // uniform t-grid on [0,1]

    void validate() const {
        if (steps < 1) throw DomainError("sampler needs at least one step");
    }
};

/// Builds the interpolant; throws DomainError for t outside [0,1] and
/// ShapeMismatch when the endpoints disagree in shape.
template <class S>
FlowSample<S> interpolate(const Tensor<S>& x0, const Tensor<S>& x1, double t);

/// Squared-error flow-matching loss between a predicted velocity (on tape)
/// and its target, over all elements (phase-1 form).
template <class S>
typename Tape<S>::Id fm_loss(Tape<S>& t, typename Tape<S>::Id velocity, const Tensor<S>& u);

/// As fm_loss but averaged only over elements with mask != 0 (phase-2 form,
/// which supervises the target stream only). Throws EmptyMask via the tape
/// when the mask selects nothing.
template <class S>
typename Tape<S>::Id fm_loss_masked(Tape<S>& t, typename Tape<S>::Id velocity, const Tensor<S>& u,
                                    const Tensor<S>& mask);

/// Mask over a stacked [2B,...] batch selecting only the target-stream rows
/// [B,2B) (ones there, zeros on the source rows).
template <class S>
Tensor<S> target_stream_mask(const Shape& stacked_shape);

/// A velocity field for the generic integrator: maps (state, time) to a
/// same-shaped velocity.
template <class S>
using VelocityField = std::function<Tensor<S>(const Tensor<S>&, double)>;

/// Explicit Euler over the uniform grid: x <- x + (1/steps) * v(x, k/steps).
/// Throws NonFiniteState as soon as a step produces a non-finite value.
template <class S>
Tensor<S> euler_sample(const VelocityField<S>& field, Tensor<S> x0, const SamplerConfig& cfg);

/// Integrates plain (non-paired) samples under the model's velocity field.
/// x0: [N,F,C,H,W] noise; one prompt and one trajectory per sample.
template <class S>
Tensor<S> plain_sample(const DiTConfig& cfg, const ParamStore<S>& store, const Tensor<S>& x0,
                       const std::vector<std::vector<std::int64_t>>& prompts,
                       const SamplerConfig& scfg);

/// Edits a batch of source videos: the source stream rides along clean at
/// t=1 while the target stream integrates from the given noise under the
/// adapted model. Returns the decoded target stream [B,F,C,H,W].
template <class S>
Tensor<S> edit_sample_batch(const DiTConfig& cfg, const ParamStore<S>& store, AblationMode mode,
                            const Tensor<S>& sources, const Tensor<S>& noise,
                            const std::vector<std::vector<std::int64_t>>& src_prompts,
                            const std::vector<std::vector<std::int64_t>>& edit_prompts,
                            const SamplerConfig& scfg);

/// Single-pair convenience wrapper: source [F,C,H,W], noise drawn from `rng`.
template <class S>
Tensor<S> edit_sample(const DiTConfig& cfg, const ParamStore<S>& store, AblationMode mode,
                      const Tensor<S>& source, const std::vector<std::int64_t>& src_prompt,
                      const std::vector<std::int64_t>& edit_prompt, const SamplerConfig& scfg,
                      Rng& rng);

}  // namespace ive
