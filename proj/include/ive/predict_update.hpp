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

#include <string>
#include <utility>
#include <vector>

#include "ive/backbone.hpp"
#include "ive/spatial.hpp"

namespace ive {

/// Variants of the adapter wiring. Full is the production path; the others
/// remove one ingredient each for controlled comparisons.
enum class AblationMode {
    Full,            // predict -> update -> gate -> fuse
    NoTextGate,      // gate replaced by an in-graph all-ones tensor
    NoUpdate,        // stops after the predictive stage
    NaiveParallel2D  // both 2D attentions read the block input directly
};

/// Throws InvalidMode for unknown names. Accepted: "full", "no-text-gate",
/// "no-update", "naive-parallel-2d".
AblationMode parse_mode(const std::string& name);
std::string to_string(AblationMode mode);

/// Tape-bound parameter handles of one per-block adapter module.
template <class S>
struct PUParams {
    LayerNormParams<S> ln1, ln2, ln3;
    MhaParams<S> attn2d_1, attn2d_2, xattn_gate;
    typename Tape<S>::Id pos2d;  // [H, 2W, d] learned position table
    ZeroLinParams<S> zlin1, zlin2;
    GateProjParams<S> gate_proj;
};

/// Collects the handles of block `block` from a bound store.
template <class S>
PUParams<S> pu_params_at(const BoundParams<S>& bp, std::size_t block, std::size_t heads);

/// Adds the adapter parameters for every block to a store that already holds
/// the backbone, freezing all backbone tensors. The two 2D attentions start
/// as bitwise copies of the block's 3D self-attention, the gate's
/// cross-attention as a copy of the block's cross-attention, and both linear
/// projections as exact zeros. Throws IncompatibleShapes if the backbone
/// tensors are absent or adapters were already attached.
void attach_pu_params(ParamStore<float>& store, const DiTConfig& cfg, std::uint64_t seed);

/// True when `name` participates in gradients under `mode` (parameters of
/// branches a mode removes receive no gradient and stay at initialization).
bool pu_param_in_mode(const std::string& name, AblationMode mode);

/// The 2HW-token sequence map used inside the spatial operator: adds the
/// learned position table, then runs self-attention.
template <class S>
SeqMap<S> attn2d_map(const MhaParams<S>& attn, typename Tape<S>::Id pos2d);

/// Predictive stage: h_2d = Phi(LN1(x), Attn2D_1); h_pred = h3d +
/// ZeroLin1(h_2d). Returns (h_pred, h_2d).
template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> predict_stage(Tape<S>& t,
                                                                    typename Tape<S>::Id x,
                                                                    typename Tape<S>::Id h3d,
                                                                    const TokenGrid& g,
                                                                    const PUParams<S>& p);

template <class S>
struct UpdateOut {
    typename Tape<S>::Id h_diff;
    typename Tape<S>::Id h_res;  // h_pred - h_2d, exposed for invariant checks
};

/// Update stage: h_res = h_pred - h_2d; h_diff = Phi(LN2(h_res), Attn2D_2).
template <class S>
UpdateOut<S> update_stage(Tape<S>& t, typename Tape<S>::Id h_pred, typename Tape<S>::Id h_2d,
                          const TokenGrid& g, const PUParams<S>& p);

/// Gate: G = GateProj(CrossAttn(LN3(h_diff), prompt_embed)), elementwise in
/// the open interval (0,1).
template <class S>
typename Tape<S>::Id semantic_gate(Tape<S>& t, typename Tape<S>::Id h_diff,
                                   typename Tape<S>::Id prompt_embed, const PUParams<S>& p);

/// Fusion: h_update = h_pred + gate * ZeroLin2(h_diff).
template <class S>
typename Tape<S>::Id fuse(Tape<S>& t, typename Tape<S>::Id h_pred, typename Tape<S>::Id h_diff,
                          typename Tape<S>::Id gate, const PUParams<S>& p);

template <class S>
struct PUOut {
    typename Tape<S>::Id h_update;
    typename Tape<S>::Id gate = -1;  // valid iff has_gate
    bool has_gate = false;
};

/// Runs the stage pipeline of the requested mode.
template <class S>
PUOut<S> pu_forward(Tape<S>& t, typename Tape<S>::Id x, typename Tape<S>::Id h3d,
                    const TokenGrid& g, typename Tape<S>::Id prompt_embed, AblationMode mode,
                    const PUParams<S>& p);

/// Gate conditioning for a stacked batch: both streams of a pair receive the
/// pair's edited-prompt embedding (rows [B,2B) duplicated onto [0,B)).
template <class S>
typename Tape<S>::Id gate_context(Tape<S>& t, typename Tape<S>::Id prompt_ctx, std::size_t pairs);

/// Per-forward observations recorded by the adapter hook.
template <class S>
struct AdapterTaps {
    std::vector<typename Tape<S>::Id> gates;  // one per block in gated modes
};

/// Block hook that runs one adapter module per backbone block on the stacked
/// source/target batch. `pairs` is B (the batch carries 2B samples).
template <class S>
BlockAdapter<S> make_pu_adapter(const DiTConfig& cfg, const BoundParams<S>& bp, AblationMode mode,
                                std::size_t pairs, AdapterTaps<S>* taps = nullptr);

template <class S>
struct EditForward {
    ForwardResult<S> fwd;
    AdapterTaps<S> taps;
};

/// Full adapted forward on a stacked batch [2B,F,C,H,W]: rows [0,B) are the
/// source stream with source prompts, rows [B,2B) the target stream with
/// edited prompts.
template <class S>
EditForward<S> edit_forward(Tape<S>& t, const DiTConfig& cfg, const BoundParams<S>& bp,
                            typename Tape<S>::Id stacked, const std::vector<double>& times,
                            const std::vector<std::vector<std::int64_t>>& prompts,
                            AblationMode mode);

}  // namespace ive
