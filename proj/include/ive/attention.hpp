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

#include "ive/tape.hpp"

namespace ive {

/// Tape handles of one multi-head attention parameter set: four [d,d]
/// projections. head_dim = d / heads; attention scale = 1/sqrt(head_dim).
template <class S>
struct MhaParams {
    typename Tape<S>::Id wq, wk, wv, wo;
    std::size_t heads = 1;
};

/// A linear projection that starts as the exact zero map (W == 0, b == 0 at
/// construction), so freshly attached adapter branches contribute nothing.
template <class S>
struct ZeroLinParams {
    typename Tape<S>::Id w, b;
};

/// Two-layer MLP with terminal sigmoid; output strictly inside (0,1).
template <class S>
struct GateProjParams {
    typename Tape<S>::Id w1, b1, w2, b2;
};

/// Layer-norm affine pair.
template <class S>
struct LayerNormParams {
    typename Tape<S>::Id gain, bias;
};

/// Multi-head attention: softmax(QKᵀ/sqrt(head_dim))·V per head, heads
/// concatenated, output-projected. Self-attention is the kv_in == q_in case;
/// cross-attention passes the conditioning sequence as kv_in.
/// q_in: [N, S, d], kv_in: [N, T, d] -> [N, S, d].
template <class S>
typename Tape<S>::Id mha(Tape<S>& t, typename Tape<S>::Id q_in, typename Tape<S>::Id kv_in,
                         const MhaParams<S>& p);

/// x·W + b over the trailing axis; exact zero for freshly built params.
template <class S>
typename Tape<S>::Id zero_linear(Tape<S>& t, typename Tape<S>::Id x, const ZeroLinParams<S>& p);

/// sigmoid(gelu(ctx·W1 + b1)·W2 + b2).
template <class S>
typename Tape<S>::Id gate_project(Tape<S>& t, typename Tape<S>::Id ctx,
                                  const GateProjParams<S>& p);

/// Per-token layer norm with affine parameters.
template <class S>
typename Tape<S>::Id layer_norm(Tape<S>& t, typename Tape<S>::Id x, const LayerNormParams<S>& p);

}  // namespace ive
