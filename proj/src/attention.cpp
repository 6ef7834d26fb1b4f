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

#include "ive/attention.hpp"

#include <cmath>

#include "ive/errors.hpp"

namespace ive {

template <class S>
typename Tape<S>::Id mha(Tape<S>& t, typename Tape<S>::Id q_in, typename Tape<S>::Id kv_in,
                         const MhaParams<S>& p) {
    const Shape qs = t.val(q_in).shape;
    const Shape ks = t.val(kv_in).shape;
    const Shape ws = t.val(p.wq).shape;
    if (qs.size() != 3 || ks.size() != 3)
        throw ShapeMismatch("mha expects [N,S,d] inputs, got " + shape_str(qs) + " and " +
                            shape_str(ks));
    const std::size_t N = qs[0], Sq = qs[1], d = qs[2];
    const std::size_t Tk = ks[1];
    if (ks[0] != N || ks[2] != d)
        throw ShapeMismatch("mha kv batch/width mismatch: " + shape_str(qs) + " vs " +
                            shape_str(ks));
    if (ws != Shape{d, d}) throw ShapeMismatch("mha params expect [d,d] with d=" + std::to_string(d));
    if (p.heads == 0 || d % p.heads != 0)
        throw ShapeMismatch("mha width " + std::to_string(d) + " not divisible by heads " +
                            std::to_string(p.heads));
    const std::size_t h = p.heads, hd = d / h;

    auto split_heads = [&](typename Tape<S>::Id x, std::size_t L) {
        return t.reshape(t.permute(t.reshape(x, {N, L, h, hd}), {0, 2, 1, 3}), {N * h, L, hd});
    };
    auto q = split_heads(t.matmul(q_in, p.wq), Sq);
    auto k = split_heads(t.matmul(kv_in, p.wk), Tk);
    auto v = split_heads(t.matmul(kv_in, p.wv), Tk);

    auto scores = t.scale(t.matmul(q, t.permute(k, {0, 2, 1})),
                          static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd))));
    auto ctx = t.matmul(t.softmax_lastaxis(scores), v);  // [N*h, Sq, hd]
    auto merged = t.reshape(t.permute(t.reshape(ctx, {N, h, Sq, hd}), {0, 2, 1, 3}), {N, Sq, d});
    return t.matmul(merged, p.wo);
}

template <class S>
typename Tape<S>::Id zero_linear(Tape<S>& t, typename Tape<S>::Id x, const ZeroLinParams<S>& p) {
    return t.add(t.matmul(x, p.w), p.b);
}

template <class S>
typename Tape<S>::Id gate_project(Tape<S>& t, typename Tape<S>::Id ctx,
                                  const GateProjParams<S>& p) {
    auto hidden = t.gelu(t.add(t.matmul(ctx, p.w1), p.b1));
    return t.sigmoid(t.add(t.matmul(hidden, p.w2), p.b2));
}

template <class S>
typename Tape<S>::Id layer_norm(Tape<S>& t, typename Tape<S>::Id x, const LayerNormParams<S>& p) {
    return t.layer_norm(x, p.gain, p.bias);
}

template Tape<float>::Id mha<float>(Tape<float>&, Tape<float>::Id, Tape<float>::Id,
                                    const MhaParams<float>&);
template Tape<double>::Id mha<double>(Tape<double>&, Tape<double>::Id, Tape<double>::Id,
                                      const MhaParams<double>&);
template Tape<float>::Id zero_linear<float>(Tape<float>&, Tape<float>::Id,
                                            const ZeroLinParams<float>&);
template Tape<double>::Id zero_linear<double>(Tape<double>&, Tape<double>::Id,
                                              const ZeroLinParams<double>&);
template Tape<float>::Id gate_project<float>(Tape<float>&, Tape<float>::Id,
                                             const GateProjParams<float>&);
template Tape<double>::Id gate_project<double>(Tape<double>&, Tape<double>::Id,
                                               const GateProjParams<double>&);
template Tape<float>::Id layer_norm<float>(Tape<float>&, Tape<float>::Id,
                                           const LayerNormParams<float>&);
template Tape<double>::Id layer_norm<double>(Tape<double>&, Tape<double>::Id,
                                             const LayerNormParams<double>&);

}  // namespace ive
