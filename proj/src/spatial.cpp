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

#include "ive/spatial.hpp"

namespace ive {

template <class S>
void expect_stacked(const Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g) {
    g.validate();
    const Shape want{2 * g.B, g.seq_len(), g.d};
    if (t.val(x).shape != want)
        throw ShapeMismatch("expected stacked stream tensor " + shape_str(want) + ", got " +
                            shape_str(t.val(x).shape));
}

template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> split_streams(Tape<S>& t,
                                                                    typename Tape<S>::Id x) {
    const auto& sh = t.val(x).shape;
    if (sh.empty() || sh[0] % 2 != 0)
        throw ShapeMismatch("split_streams needs an even leading extent, got " + shape_str(sh));
    const std::size_t B = sh[0] / 2;
    return {t.slice(x, 0, 0, B), t.slice(x, 0, B, 2 * B)};
}

template <class S>
typename Tape<S>::Id stack_streams(Tape<S>& t, typename Tape<S>::Id src,
                                   typename Tape<S>::Id tgt) {
    if (t.val(src).shape != t.val(tgt).shape)
        throw ShapeMismatch("stack_streams shapes " + shape_str(t.val(src).shape) + " vs " +
                            shape_str(t.val(tgt).shape));
    return t.concat({src, tgt}, 0);
}

template <class S>
typename Tape<S>::Id fold_time(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g) {
    g.validate();
    const auto& sh = t.val(x).shape;
    if (sh != Shape{g.B, g.seq_len(), g.d})
        throw ShapeMismatch("fold_time expects [B,FHW,d] == [" + std::to_string(g.B) + "," +
                            std::to_string(g.seq_len()) + "," + std::to_string(g.d) + "], got " +
                            shape_str(sh));
    // row-major [B, (f,h,w), d] == [B*F, H, W, d]: reshape only
    return t.reshape(x, {g.B * g.F, g.H, g.W, g.d});
}

template <class S>
typename Tape<S>::Id unfold_time(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g) {
    g.validate();
    const auto& sh = t.val(x).shape;
    if (sh != Shape{g.B * g.F, g.H, g.W, g.d})
        throw ShapeMismatch("unfold_time expects [BF,H,W,d], got " + shape_str(sh));
    return t.reshape(x, {g.B, g.seq_len(), g.d});
}

template <class S>
typename Tape<S>::Id widthwise_join(Tape<S>& t, typename Tape<S>::Id src,
                                    typename Tape<S>::Id tgt) {
    const auto& a = t.val(src).shape;
    if (a != t.val(tgt).shape || a.size() != 4)
        throw ShapeMismatch("widthwise_join expects equal [BF,H,W,d] inputs");
    return t.concat({src, tgt}, 2);
}

template <class S>
std::pair<typename Tape<S>::Id, typename Tape<S>::Id> widthwise_split(Tape<S>& t,
                                                                      typename Tape<S>::Id m) {
    const auto& sh = t.val(m).shape;
    if (sh.size() != 4 || sh[2] % 2 != 0)
        throw ShapeMismatch("widthwise_split expects [BF,H,2W,d], got " + shape_str(sh));
    const std::size_t W = sh[2] / 2;
    return {t.slice(m, 2, 0, W), t.slice(m, 2, W, 2 * W)};
}

template <class S>
typename Tape<S>::Id phi(Tape<S>& t, typename Tape<S>::Id x, const TokenGrid& g,
                         const SeqMap<S>& attn) {
    expect_stacked(t, x, g);
    auto [src, tgt] = split_streams(t, x);
    auto joined = widthwise_join(t, fold_time(t, src, g), fold_time(t, tgt, g));
    auto seq = t.reshape(joined, {g.B * g.F, 2 * g.H * g.W, g.d});
    auto mapped = attn(t, seq);
    if (t.val(mapped).shape != t.val(seq).shape)
        throw ShapeMismatch("phi attention changed sequence shape " +
                            shape_str(t.val(seq).shape) + " -> " +
                            shape_str(t.val(mapped).shape));
    auto grid = t.reshape(mapped, {g.B * g.F, g.H, 2 * g.W, g.d});
    auto [src2, tgt2] = widthwise_split(t, grid);
    return stack_streams(t, unfold_time(t, src2, g), unfold_time(t, tgt2, g));
}

template void expect_stacked<float>(const Tape<float>&, Tape<float>::Id, const TokenGrid&);
template void expect_stacked<double>(const Tape<double>&, Tape<double>::Id, const TokenGrid&);
template std::pair<Tape<float>::Id, Tape<float>::Id> split_streams<float>(Tape<float>&,
                                                                          Tape<float>::Id);
template std::pair<Tape<double>::Id, Tape<double>::Id> split_streams<double>(Tape<double>&,
                                                                             Tape<double>::Id);
template Tape<float>::Id stack_streams<float>(Tape<float>&, Tape<float>::Id, Tape<float>::Id);
template Tape<double>::Id stack_streams<double>(Tape<double>&, Tape<double>::Id,
                                                Tape<double>::Id);
template Tape<float>::Id fold_time<float>(Tape<float>&, Tape<float>::Id, const TokenGrid&);
template Tape<double>::Id fold_time<double>(Tape<double>&, Tape<double>::Id, const TokenGrid&);
template Tape<float>::Id unfold_time<float>(Tape<float>&, Tape<float>::Id, const TokenGrid&);
template Tape<double>::Id unfold_time<double>(Tape<double>&, Tape<double>::Id, const TokenGrid&);
template Tape<float>::Id widthwise_join<float>(Tape<float>&, Tape<float>::Id, Tape<float>::Id);
template Tape<double>::Id widthwise_join<double>(Tape<double>&, Tape<double>::Id,
                                                 Tape<double>::Id);
template std::pair<Tape<float>::Id, Tape<float>::Id> widthwise_split<float>(Tape<float>&,
                                                                            Tape<float>::Id);
template std::pair<Tape<double>::Id, Tape<double>::Id> widthwise_split<double>(Tape<double>&,
                                                                               Tape<double>::Id);
template Tape<float>::Id phi<float>(Tape<float>&, Tape<float>::Id, const TokenGrid&,
                                    const SeqMap<float>&);
template Tape<double>::Id phi<double>(Tape<double>&, Tape<double>::Id, const TokenGrid&,
                                      const SeqMap<double>&);

}  // namespace ive
