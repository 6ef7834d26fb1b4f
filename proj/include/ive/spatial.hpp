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
#include <utility>

#include "ive/errors.hpp"
#include "ive/tape.hpp"

namespace ive {

/// Layout descriptor for the paired-stream token tensors: B batch pairs,
/// F frames, H×W token grid, d channels. A stacked tensor has shape
/// [2B, F·H·W, d] with rows [0,B) holding the source stream and [B,2B) the
/// target stream.
struct TokenGrid {
    std::size_t B = 1;
    std::size_t F = 1;
    std::size_t H = 1;
    std::size_t W = 1;
    std::size_t d = 1;

    std::size_t seq_len() const { return F * H * W; }

    void validate() const {
        if (B < 1 || F < 1 || H < 1 || W < 1 || d < 1)
            throw ShapeMismatch("TokenGrid extents must all be >= 1");
    }
};

/// Shape-checks x against [2B, FHW, d].
template <class S>
void expect_stacked(const Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g);

/// [2B, FHW, d] -> source [B, FHW, d], target [B, FHW, d].
template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> split_streams(Tape<S>& t,
                                                                    typename Tape<S>::Id x);

/// Inverse of split_streams: concatenates [source; target] on the batch axis.
template <class S>
typename Tape<S>::Id stack_streams(Tape<S>& t, typename Tape<S>::Id src,
                                   typename Tape<S>::Id tgt);

/// [B, FHW, d] -> [BF, H, W, d]; frame f of batch b lands at folded index
/// b*F + f. A pure reshape under the row-major layout.
template <class S>
typename Tape<S>::Id fold_time(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g);

/// Inverse of fold_time.
template <class S>
typename Tape<S>::Id unfold_time(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g);

/// Two [BF, H, W, d] tensors -> [BF, H, 2W, d]; columns [0,W) source,
/// [W,2W) target.
template <class S>
typename Tape<S>::Id widthwise_join(Tape<S>& t, typename Tape<S>::Id src,
                                    typename Tape<S>::Id tgt);

/// Inverse of widthwise_join.
template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> widthwise_split(Tape<S>& t,
                                                                      typename Tape<S>::Id m);

/// A map over joined per-frame token sequences: [N, 2HW, d] -> [N, 2HW, d].
template <class S>
using SeqMap = std::function<typename Tape<S>::Id(Tape<S>&, typename Tape<S>::Id)>;

/// The shared 2D spatial interaction operator: splits streams, folds frames
/// into the batch, joins source/target along the width, flattens each frame
/// to a 2HW-token sequence, applies `attn`, and inverts every step. Tokens of
/// different frames never interact here; source and target tokens of the
/// same frame do.
template <class S>
typename Tape<S>::Id phi(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g,
                         const SeqMap<S>& attn);

}  // namespace ive
