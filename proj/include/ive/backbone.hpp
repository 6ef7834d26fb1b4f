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

#include <cstdint>
#include <functional>
#include <vector>

#include "ive/model_state.hpp"

namespace ive {

/// Reserved prompt token that pads every prompt to its fixed length. It may
/// appear only as a trailing run; an all-pad prompt counts as missing.
inline constexpr std::int64_t kPadToken = 0;

/// Geometry and width of the velocity-prediction transformer. The defaults
/// describe the standard desk-scale model; tiny() is a miniature used by the
/// 64-bit finite-difference checks.
struct DiTConfig {
    std::size_t image_size = 16;  // square RGB canvas
    std::size_t channels = 3;
    std::size_t patch = 2;
    std::size_t frames_max = 8;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t blocks = 4;
    std::size_t vocab = 64;
    std::size_t prompt_len = 8;

    std::size_t grid_h() const { return image_size / patch; }
    std::size_t grid_w() const { return image_size / patch; }
    std::size_t tokens_per_frame() const { return grid_h() * grid_w(); }
    std::size_t patch_dim() const { return channels * patch * patch; }
    std::size_t mlp_hidden() const { return 2 * d_model; }

    /// Throws DomainError when extents are inconsistent (patch must divide
    /// the image, heads must divide the width, vocab must cover PAD).
    void validate() const;

    static DiTConfig tiny();

    bool operator==(const DiTConfig&) const = default;
};

/// Throws MissingPrompt for empty or all-PAD prompts, ShapeMismatch for
/// over-long ones, DomainError for out-of-range ids or interior padding.
void validate_prompt(const std::vector<std::int64_t>& ids, const DiTConfig& cfg);

/// Freshly initialized parameter set (nothing frozen; phase 1 trains all of
/// it). Every tensor draws from its own seed stream keyed by parameter name,
/// so the values are independent of insertion order.
ParamStore<float> init_backbone(const DiTConfig& cfg, std::uint64_t seed);

/// Sinusoidal features of a diffusion time in [0,1] (half sines, half
/// cosines over a geometric frequency ladder). Throws DomainError outside
/// the unit interval.
Tensor<double> time_features(double tval, std::size_t dim);

/// Per-block observation points: the block input (which the adapter reads)
/// and the post-3D-self-attention hidden state it fuses with.
template <class S>
struct BlockTap {
    typename Tape<S>::Id x_in;
    typename Tape<S>::Id h3d;
};

/// Hook invoked once per block between 3D self-attention and the residual
/// add. It receives the block index, the block input, the self-attention
/// branch output, and the prompt context, and returns the residual that
/// replaces h3d. The bare backbone is the `return h3d` hook.
template <class S>
using BlockAdapter =
    std::function<typename Tape<S>::Id(Tape<S>&, std::size_t, typename Tape<S>::Id,
                                       typename Tape<S>::Id, typename Tape<S>::Id)>;

template <class S>
struct ForwardResult {
    typename Tape<S>::Id velocity;    // [N,F,C,H,W], same extents as the input
    typename Tape<S>::Id prompt_ctx;  // [N, prompt_len, d]
    std::vector<BlockTap<S>> taps;    // one entry per block, in depth order
};

/// Non-overlapping patches, linearly embedded, with learned spatial and frame
/// position terms added: [N,F,C,H,W] -> [N, F·h·w, d].
template <class S>
typename Tape<S>::Id patchify(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                              typename Tape<S>::Id video);

/// Exact inverse of the patch flattening: [N, F·h·w, patch_dim] -> [N,F,C,H,W].
template <class S>
typename Tape<S>::Id unpatchify(Tape<S>& t, const DiTConfig& cfg, typename Tape<S>::Id tokens,
                                std::size_t frames);

/// Per-sample time embedding: sinusoidal features through a two-layer MLP,
/// one row per sample -> [N, d].
template <class S>
typename Tape<S>::Id time_embed(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                const std::vector<double>& times);

/// Prompt context: embedding-table rows plus learned positions -> [N, L, d].
/// Short prompts are padded to prompt_len before lookup.
template <class S>
typename Tape<S>::Id embed_prompts(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                   const std::vector<std::vector<std::int64_t>>& prompts);

/// Full velocity prediction: patchify + positions + time conditioning, then
/// `blocks` rounds of (3D self-attention [adapter hook], cross-attention on
/// the prompt, MLP) with pre-norm residuals, then the zero-initialized output
/// head and unpatchify.
template <class S>
ForwardResult<S> backbone_forward(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                                  typename Tape<S>::Id video, const std::vector<double>& times,
                                  const std::vector<std::vector<std::int64_t>>& prompts,
                                  const BlockAdapter<S>& adapter = {});

}  // namespace ive
