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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ive/errors.hpp"
#include "ive/tensor.hpp"

namespace ive {

/// Reverse-mode autodiff over a linear tape of tensor operations.
///
/// Every op appends one node holding its output value; inputs always precede
/// the node (topological order by construction). backward() sweeps the tape
/// in exact reverse order with fixed-order accumulation loops, so gradients
/// from identical tapes are bitwise identical.
///
/// Broadcasting is restricted to "suffix" broadcast: in add/mul the second
/// operand's shape must equal a trailing suffix of the first's (covers the
/// scalar and trailing-axis gain/bias cases and nothing else).
template <class S>
class Tape {
public:
    using Id = std::int32_t;

    enum class Op : std::uint8_t {
        Leaf,
        Add,
        Sub,
        Mul,
        Scale,
        Sigmoid,
        Gelu,
        MatMul,
        Softmax,
        LayerNorm,
        Reshape,
        Permute,
        Slice,
        Concat,
        Expand1,
        Embed,
        Mse,
        Sum,
    };

    // ---- graph construction -------------------------------------------------

    Id input(Tensor<S> v, bool requires_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    Id constant(Tensor<S> v) { return input(std::move(v), false); }

    Id add(Id a, Id b) {
        check_suffix(val(a).shape, val(b).shape, "add");
        Node n = make(Op::Add, {a, b});
        n.value = Tensor<S>(val(a).shape);
        const auto& x = val(a);
        const auto& y = val(b);
        const std::size_t bn = y.size();
        for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = x.data[i] + y.data[i % bn];
        return push(std::move(n));
    }

    Id sub(Id a, Id b) {
        if (val(a).shape != val(b).shape)
            throw ShapeMismatch("sub " + shape_str(val(a).shape) + " vs " + shape_str(val(b).shape));
        Node n = make(Op::Sub, {a, b});
        n.value = Tensor<S>(val(a).shape);
        for (std::size_t i = 0; i < n.value.size(); ++i)
            n.value.data[i] = val(a).data[i] - val(b).data[i];
        return push(std::move(n));
    }

    Id mul(Id a, Id b) {
        check_suffix(val(a).shape, val(b).shape, "mul");
        Node n = make(Op::Mul, {a, b});
        n.value = Tensor<S>(val(a).shape);
        const std::size_t bn = val(b).size();
        for (std::size_t i = 0; i < n.value.size(); ++i)
            n.value.data[i] = val(a).data[i] * val(b).data[i % bn];
        return push(std::move(n));
    }

    Id scale(Id a, S c) {
        Node n = make(Op::Scale, {a});
        n.saux = c;
        n.value = Tensor<S>(val(a).shape);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data[i] = c * val(a).data[i];
        return push(std::move(n));
    }

    Id sigmoid(Id a) {
        Node n = make(Op::Sigmoid, {a});
        n.value = Tensor<S>(val(a).shape);
        for (std::size_t i = 0; i < n.value.size(); ++i)
            n.value.data[i] = stable_sigmoid(val(a).data[i]);
        return push(std::move(n));
    }

    Id gelu(Id a) {
        Node n = make(Op::Gelu, {a});
        n.value = Tensor<S>(val(a).shape);
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            const double x = static_cast<double>(val(a).data[i]);
            n.value.data[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
        }
        return push(std::move(n));
    }

    /// a: [..., m, k]; b: [k, n] (broadcast over a's batch) or [..., k, n]
    /// with leading extents equal to a's.
    Id matmul(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rank() < 2 || B.rank() < 2) throw ShapeMismatch("matmul needs rank >= 2");
        const std::size_t m = A.shape[A.rank() - 2];
        const std::size_t k = A.shape[A.rank() - 1];
        const std::size_t kb = B.shape[B.rank() - 2];
        const std::size_t nn = B.shape[B.rank() - 1];
        if (k != kb)
            throw ShapeMismatch("matmul inner " + shape_str(A.shape) + " x " + shape_str(B.shape));
        bool b_broadcast = (B.rank() == 2 && A.rank() > 2);
        if (!b_broadcast && A.rank() != B.rank())
            throw ShapeMismatch("matmul batch ranks " + shape_str(A.shape) + " x " +
                                shape_str(B.shape));
        Shape out_shape(A.shape.begin(), A.shape.end() - 1);
        out_shape.push_back(nn);
        std::size_t batch = 1;
        for (std::size_t i = 0; i + 2 < A.rank(); ++i) {
            batch *= A.shape[i];
            if (!b_broadcast && A.shape[i] != B.shape[i])
                throw ShapeMismatch("matmul batch dims " + shape_str(A.shape) + " x " +
                                    shape_str(B.shape));
        }
        Node n = make(Op::MatMul, {a, b});
        n.value = Tensor<S>(out_shape);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const S* ap = A.data.data() + bi * m * k;
            const S* bp = B.data.data() + (b_broadcast ? 0 : bi * k * nn);
            S* cp = n.value.data.data() + bi * m * nn;
            gemm_acc(ap, bp, cp, m, k, nn);
        }
        return push(std::move(n));
    }

    Id softmax_lastaxis(Id a) {
        const auto& x = val(a);
        if (x.rank() < 1 || x.shape.back() < 1) throw ShapeMismatch("softmax needs last extent >= 1");
        Node n = make(Op::Softmax, {a});
        n.value = Tensor<S>(x.shape);
        const std::size_t L = x.shape.back();
        const std::size_t rows = x.size() / L;
        for (std::size_t r = 0; r < rows; ++r) {
            const S* in = x.data.data() + r * L;
            S* out = n.value.data.data() + r * L;
            S mx = in[0];
            for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, in[j]);
            S sum = S(0);
            for (std::size_t j = 0; j < L; ++j) {
                out[j] = static_cast<S>(std::exp(static_cast<double>(in[j] - mx)));
                sum += out[j];
            }
            const S inv = S(1) / sum;
            for (std::size_t j = 0; j < L; ++j) out[j] *= inv;
        }
        return push(std::move(n));
    }

    /// Per-token normalization over the last axis, then gain/bias.
    Id layer_norm(Id x, Id gain, Id bias, S eps = S(1e-5)) {
        const auto& xv = val(x);
        if (xv.rank() < 1) throw ShapeMismatch("layer_norm needs rank >= 1");
        const std::size_t d = xv.shape.back();
        if (val(gain).shape != Shape{d} || val(bias).shape != Shape{d})
            throw ShapeMismatch("layer_norm gain/bias must be [d]");
        if (!(eps > S(0))) throw DomainError("layer_norm eps must be > 0");
        Node n = make(Op::LayerNorm, {x, gain, bias});
        n.saux = eps;
        n.value = Tensor<S>(xv.shape);
        const std::size_t tokens = xv.size() / d;
        const auto& g = val(gain);
        const auto& b = val(bias);
        for (std::size_t t = 0; t < tokens; ++t) {
            const S* in = xv.data.data() + t * d;
            S* out = n.value.data.data() + t * d;
            S mean = S(0);
            for (std::size_t j = 0; j < d; ++j) mean += in[j];
            mean /= static_cast<S>(d);
            S var = S(0);
            for (std::size_t j = 0; j < d; ++j) {
                const S c = in[j] - mean;
                var += c * c;
            }
            var /= static_cast<S>(d);
            const S rstd = S(1) / static_cast<S>(std::sqrt(static_cast<double>(var + eps)));
            for (std::size_t j = 0; j < d; ++j)
                out[j] = (in[j] - mean) * rstd * g.data[j] + b.data[j];
        }
        return push(std::move(n));
    }

    Id reshape(Id a, Shape sh) {
        if (numel(sh) != val(a).size())
            throw ShapeMismatch("reshape " + shape_str(val(a).shape) + " -> " + shape_str(sh));
        Node n = make(Op::Reshape, {a});
        n.value = Tensor<S>(std::move(sh), val(a).data);
        return push(std::move(n));
    }

    Id permute(Id a, const std::vector<std::size_t>& perm) {
        const auto& x = val(a);
        if (perm.size() != x.rank()) throw InvalidAxis("permute rank mismatch");
        std::vector<bool> seen(perm.size(), false);
        Shape out_shape(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            if (perm[i] >= x.rank() || seen[perm[i]]) throw InvalidAxis("invalid permutation");
            seen[perm[i]] = true;
            out_shape[i] = x.shape[perm[i]];
        }
        Node n = make(Op::Permute, {a});
        n.iaux.assign(perm.begin(), perm.end());
        n.value = Tensor<S>(out_shape);
        permute_copy(x, n.value, perm, /*inverse=*/false);
        return push(std::move(n));
    }

    Id slice(Id a, std::size_t axis, std::size_t begin, std::size_t end) {
        const auto& x = val(a);
        if (axis >= x.rank()) throw InvalidAxis("slice axis");
        if (begin > end || end > x.shape[axis]) throw ShapeMismatch("slice bounds");
        Node n = make(Op::Slice, {a});
        n.iaux = {static_cast<std::int64_t>(axis), static_cast<std::int64_t>(begin),
                  static_cast<std::int64_t>(end)};
        Shape out_shape = x.shape;
        out_shape[axis] = end - begin;
        n.value = Tensor<S>(out_shape);
        slice_copy(x, n.value, axis, begin, /*scatter=*/false);
        return push(std::move(n));
    }

    Id concat(const std::vector<Id>& parts, std::size_t axis) {
        if (parts.empty()) throw ShapeMismatch("concat of nothing");
        const auto& first = val(parts[0]);
        if (axis >= first.rank()) throw InvalidAxis("concat axis");
        Shape out_shape = first.shape;
        std::size_t total = 0;
        for (Id p : parts) {
            const auto& t = val(p);
            if (t.rank() != first.rank()) throw ShapeMismatch("concat rank");
            for (std::size_t i = 0; i < t.rank(); ++i)
                if (i != axis && t.shape[i] != first.shape[i])
                    throw ShapeMismatch("concat extents");
            total += t.shape[axis];
        }
        out_shape[axis] = total;
        Node n;
        n.op = Op::Concat;
        n.args = parts;
        for (Id p : parts) n.requires_grad = n.requires_grad || node(p).requires_grad;
        n.iaux = {static_cast<std::int64_t>(axis)};
        n.value = Tensor<S>(out_shape);
        std::size_t offset = 0;
        for (Id p : parts) {
            slice_copy(n.value, const_cast<Tensor<S>&>(val(p)), axis, offset, /*scatter=*/false,
                       /*reverse=*/true);
            offset += val(p).shape[axis];
        }
        return push(std::move(n));
    }

    /// Repeats an axis of extent 1 k times (explicit broadcast).
    Id expand1(Id a, std::size_t axis, std::size_t k) {
        const auto& x = val(a);
        if (axis >= x.rank()) throw InvalidAxis("expand1 axis");
        if (x.shape[axis] != 1) throw ShapeMismatch("expand1 needs extent 1 on axis");
        Node n = make(Op::Expand1, {a});
        n.iaux = {static_cast<std::int64_t>(axis), static_cast<std::int64_t>(k)};
        Shape out_shape = x.shape;
        out_shape[axis] = k;
        n.value = Tensor<S>(out_shape);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
        for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t i = 0; i < inner; ++i)
                    n.value.data[(o * k + r) * inner + i] = x.data[o * inner + i];
        return push(std::move(n));
    }

    /// table: [V, d]; ids give the leading layout of the output.
    Id embed(Id table, const std::vector<std::int64_t>& ids, Shape ids_shape) {
        const auto& tb = val(table);
        if (tb.rank() != 2) throw ShapeMismatch("embed table must be [V,d]");
        if (numel(ids_shape) != ids.size()) throw ShapeMismatch("embed ids shape");
        const std::size_t d = tb.shape[1];
        Node n = make(Op::Embed, {table});
        n.iaux = ids;
        Shape out_shape = ids_shape;
        out_shape.push_back(d);
        n.value = Tensor<S>(out_shape);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto id = ids[i];
            if (id < 0 || static_cast<std::size_t>(id) >= tb.shape[0])
                throw DomainError("embed id out of range");
            for (std::size_t j = 0; j < d; ++j)
                n.value.data[i * d + j] = tb.data[static_cast<std::size_t>(id) * d + j];
        }
        return push(std::move(n));
    }

    /// Mean of squared differences; with a mask, over mask-selected elements.
    Id mse(Id pred, Id target) { return mse_impl(pred, target, nullptr); }
    Id mse_masked(Id pred, Id target, const Tensor<S>& mask) { return mse_impl(pred, target, &mask); }

    Id sum(Id a) {
        Node n = make(Op::Sum, {a});
        n.value = Tensor<S>();
        S s = S(0);
        for (S v : val(a).data) s += v;
        n.value.data[0] = s;
        return push(std::move(n));
    }

    // ---- access --------------------------------------------------------------

    /// References returned by val()/grad() are invalidated by the next op
    /// call (the node store may reallocate); copy what you need to keep.
    const Tensor<S>& val(Id id) const { return node(id).value; }
    bool requires_grad(Id id) const { return node(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward() w.r.t. node id; zeros if unreached.
    const Tensor<S>& grad(Id id) const {
        const Node& n = node(id);
        if (n.grad.size() != n.value.size()) {
            // never touched during backward: report zeros of the right shape
            const_cast<Node&>(n).grad = Tensor<S>(n.value.shape);
        }
        return n.grad;
    }

    // ---- backward ------------------------------------------------------------

    /// Seeds d(loss) = 1 and sweeps the tape in reverse creation order.
    void backward(Id loss) {
        if (loss < 0 || static_cast<std::size_t>(loss) >= nodes_.size())
            throw DisconnectedGraph("loss is not on this tape");
        if (val(loss).size() != 1)
            throw DisconnectedGraph("backward needs a scalar loss");
        for (auto& n : nodes_) {
            n.grad = Tensor<S>(n.value.shape);  // zeroed
        }
        nodes_[static_cast<std::size_t>(loss)].grad.data[0] = S(1);
        for (std::size_t i = static_cast<std::size_t>(loss) + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.op == Op::Leaf) continue;
            backprop(n);
        }
    }

    void check_all_finite() const {
        for (const auto& n : nodes_)
            if (!n.value.all_finite()) throw NonFiniteState("non-finite value on tape");
    }

private:
    struct Node {
        Op op = Op::Leaf;
        std::vector<Id> args;
        std::vector<std::int64_t> iaux;
        S saux = S(0);
        Tensor<S> value;
        Tensor<S> grad;  // sized during backward
        Tensor<S> taux;  // op-specific constant (mse mask)
        bool requires_grad = false;
    };

    static constexpr double kInvSqrt2 = 0.7071067811865475244;
    static constexpr double kInvSqrt2Pi = 0.3989422804014326779;

    std::vector<Node> nodes_;

    Node& node(Id id) { return nodes_.at(static_cast<std::size_t>(id)); }
    const Node& node(Id id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    Node make(Op op, std::initializer_list<Id> args) {
        Node n;
        n.op = op;
        n.args.assign(args);
        for (Id a : n.args) n.requires_grad = n.requires_grad || node(a).requires_grad;
        return n;
    }

    Id push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    static void check_suffix(const Shape& a, const Shape& b, const char* what) {
        if (b.size() > a.size())
            throw ShapeMismatch(std::string(what) + " " + shape_str(a) + " vs " + shape_str(b));
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[b.size() - 1 - i] != a[a.size() - 1 - i])
                throw ShapeMismatch(std::string(what) + " " + shape_str(a) + " vs " + shape_str(b));
    }

    static S stable_sigmoid(S x) {
        double y;
        const double xd = static_cast<double>(x);
        if (xd >= 0.0) {
            y = 1.0 / (1.0 + std::exp(-xd));
        } else {
            const double e = std::exp(xd);
            y = e / (1.0 + e);
        }
        // keep the codomain strictly open even after rounding
        S out = static_cast<S>(y);
        if (out >= S(1)) out = S(1) - std::numeric_limits<S>::epsilon() / S(2);
        if (out <= S(0)) out = std::numeric_limits<S>::denorm_min();
        return out;
    }

    Id mse_impl(Id pred, Id target, const Tensor<S>* mask) {
        const auto& p = val(pred);
        const auto& t = val(target);
        if (p.shape != t.shape)
            throw ShapeMismatch("mse " + shape_str(p.shape) + " vs " + shape_str(t.shape));
        Node n = make(Op::Mse, {pred, target});
        S denom;
        if (mask) {
            if (mask->shape != p.shape) throw ShapeMismatch("mse mask shape");
            n.taux = *mask;
            n.iaux = {1};
            S cnt = S(0);
            for (S m : mask->data) cnt += m;
            if (cnt <= S(0)) throw EmptyMask("mse mask selects zero elements");
            denom = cnt;
        } else {
            denom = static_cast<S>(p.size());
        }
        n.saux = denom;
        n.value = Tensor<S>();
        S acc = S(0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const S dlt = p.data[i] - t.data[i];
            const S w = mask ? mask->data[i] : S(1);
            acc += w * dlt * dlt;
        }
        n.value.data[0] = acc / denom;
        return push(std::move(n));
    }

    static void permute_copy(const Tensor<S>& src, Tensor<S>& dst,
                             const std::vector<std::size_t>& perm, bool inverse) {
        const Shape in_strides = strides_of(src.shape);
        const std::size_t r = src.rank();
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t flat = 0; flat < dst.size(); ++flat) {
            // idx is the multi-index into dst
            std::size_t src_flat = 0;
            for (std::size_t i = 0; i < r; ++i) src_flat += idx[i] * in_strides[perm[i]];
            if (!inverse)
                dst.data[flat] = src.data[src_flat];
            else
                const_cast<Tensor<S>&>(src).data[src_flat] += dst.data[flat];
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < dst.shape[i]) break;
                idx[i] = 0;
            }
        }
    }

    /// Copies between a tensor and a contiguous band [begin, begin+extent)
    /// along `axis`. reverse=false: big -> small (read slice). reverse=true:
    /// small -> big region (write). scatter=true accumulates instead of assigns.
    static void slice_copy(const Tensor<S>& big, Tensor<S>& small, std::size_t axis,
                           std::size_t begin, bool scatter, bool reverse = false) {
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= big.shape[i];
        for (std::size_t i = axis + 1; i < big.rank(); ++i) inner *= big.shape[i];
        const std::size_t big_ax = big.shape[axis];
        const std::size_t small_ax = small.shape[axis];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t s = 0; s < small_ax; ++s) {
                const std::size_t big_off = (o * big_ax + begin + s) * inner;
                const std::size_t small_off = (o * small_ax + s) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    if (reverse) {
                        const_cast<Tensor<S>&>(big).data[big_off + i] =
                            small.data[small_off + i];
                    } else if (scatter) {
                        const_cast<Tensor<S>&>(big).data[big_off + i] += small.data[small_off + i];
                    } else {
                        small.data[small_off + i] = big.data[big_off + i];
                    }
                }
            }
        }
    }

    void accumulate_suffix(Tensor<S>& dst, const Tensor<S>& g) {
        // dst has the (smaller) broadcast shape; g the full shape
        const std::size_t bn = dst.size();
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i % bn] += g.data[i];
    }

    void backprop(Node& n) {
        const Tensor<S>& g = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                Node& a = node(n.args[0]);
                Node& b = node(n.args[1]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i];
                if (b.requires_grad) accumulate_suffix(b.grad, g);
                break;
            }
            case Op::Sub: {
                Node& a = node(n.args[0]);
                Node& b = node(n.args[1]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i];
                if (b.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) b.grad.data[i] -= g.data[i];
                break;
            }
            case Op::Mul: {
                Node& a = node(n.args[0]);
                Node& b = node(n.args[1]);
                const std::size_t bn = b.value.size();
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        a.grad.data[i] += g.data[i] * b.value.data[i % bn];
                if (b.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        b.grad.data[i % bn] += g.data[i] * a.value.data[i];
                break;
            }
            case Op::Scale: {
                Node& a = node(n.args[0]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) a.grad.data[i] += n.saux * g.data[i];
                break;
            }
            case Op::Sigmoid: {
                Node& a = node(n.args[0]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const S y = n.value.data[i];
                        a.grad.data[i] += g.data[i] * y * (S(1) - y);
                    }
                break;
            }
            case Op::Gelu: {
                Node& a = node(n.args[0]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double x = static_cast<double>(a.value.data[i]);
                        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                        a.grad.data[i] += g.data[i] * static_cast<S>(cdf + x * pdf);
                    }
                break;
            }
            case Op::MatMul:
                backprop_matmul(n);
                break;
            case Op::Softmax: {
                Node& a = node(n.args[0]);
                if (!a.requires_grad) break;
                const std::size_t L = n.value.shape.back();
                const std::size_t rows = n.value.size() / L;
                for (std::size_t r = 0; r < rows; ++r) {
                    const S* y = n.value.data.data() + r * L;
                    const S* gr = g.data.data() + r * L;
                    S dot = S(0);
                    for (std::size_t j = 0; j < L; ++j) dot += gr[j] * y[j];
                    S* da = a.grad.data.data() + r * L;
                    for (std::size_t j = 0; j < L; ++j) da[j] += y[j] * (gr[j] - dot);
                }
                break;
            }
            case Op::LayerNorm:
                backprop_layer_norm(n);
                break;
            case Op::Reshape: {
                Node& a = node(n.args[0]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i) a.grad.data[i] += g.data[i];
                break;
            }
            case Op::Permute: {
                Node& a = node(n.args[0]);
                if (!a.requires_grad) break;
                std::vector<std::size_t> perm(n.iaux.begin(), n.iaux.end());
                permute_copy(a.grad, const_cast<Tensor<S>&>(g), perm, /*inverse=*/true);
                break;
            }
            case Op::Slice: {
                Node& a = node(n.args[0]);
                if (!a.requires_grad) break;
                slice_copy(a.grad, const_cast<Tensor<S>&>(g),
                           static_cast<std::size_t>(n.iaux[0]),
                           static_cast<std::size_t>(n.iaux[1]), /*scatter=*/true);
                break;
            }
            case Op::Concat: {
                const std::size_t axis = static_cast<std::size_t>(n.iaux[0]);
                std::size_t offset = 0;
                for (Id p : n.args) {
                    Node& part = node(p);
                    if (part.requires_grad) {
                        Tensor<S> piece(part.value.shape);
                        slice_copy(g, piece, axis, offset, /*scatter=*/false);
                        for (std::size_t i = 0; i < piece.size(); ++i)
                            part.grad.data[i] += piece.data[i];
                    }
                    offset += part.value.shape[axis];
                }
                break;
            }
            case Op::Expand1: {
                Node& a = node(n.args[0]);
                if (!a.requires_grad) break;
                const std::size_t axis = static_cast<std::size_t>(n.iaux[0]);
                const std::size_t k = static_cast<std::size_t>(n.iaux[1]);
                std::size_t outer = 1, inner = 1;
                for (std::size_t i = 0; i < axis; ++i) outer *= a.value.shape[i];
                for (std::size_t i = axis + 1; i < a.value.rank(); ++i) inner *= a.value.shape[i];
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t r = 0; r < k; ++r)
                        for (std::size_t i = 0; i < inner; ++i)
                            a.grad.data[o * inner + i] += g.data[(o * k + r) * inner + i];
                break;
            }
            case Op::Embed: {
                Node& tb = node(n.args[0]);
                if (!tb.requires_grad) break;
                const std::size_t d = tb.value.shape[1];
                for (std::size_t i = 0; i < n.iaux.size(); ++i) {
                    const std::size_t row = static_cast<std::size_t>(n.iaux[i]);
                    for (std::size_t j = 0; j < d; ++j)
                        tb.grad.data[row * d + j] += g.data[i * d + j];
                }
                break;
            }
            case Op::Mse: {
                Node& p = node(n.args[0]);
                Node& t = node(n.args[1]);
                const S g0 = g.data[0];
                const bool masked = !n.iaux.empty();
                const S inv = S(2) / n.saux;
                for (std::size_t i = 0; i < p.value.size(); ++i) {
                    const S w = masked ? n.taux.data[i] : S(1);
                    const S d = g0 * inv * w * (p.value.data[i] - t.value.data[i]);
                    if (p.requires_grad) p.grad.data[i] += d;
                    if (t.requires_grad) t.grad.data[i] -= d;
                }
                break;
            }
            case Op::Sum: {
                Node& a = node(n.args[0]);
                if (a.requires_grad)
                    for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.data[i] += g.data[0];
                break;
            }
        }
    }

    void backprop_matmul(Node& n) {
        Node& an = node(n.args[0]);
        Node& bn = node(n.args[1]);
        const Tensor<S>& A = an.value;
        const Tensor<S>& B = bn.value;
        const Tensor<S>& G = n.grad;
        const std::size_t m = A.shape[A.rank() - 2];
        const std::size_t k = A.shape[A.rank() - 1];
        const std::size_t nn = B.shape[B.rank() - 1];
        const bool b_broadcast = (B.rank() == 2 && A.rank() > 2);
        std::size_t batch = 1;
        for (std::size_t i = 0; i + 2 < A.rank(); ++i) batch *= A.shape[i];
        std::vector<S> bt, at;
        if (an.requires_grad) bt.resize(nn * k);
        if (bn.requires_grad) at.resize(k * m);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const S* ap = A.data.data() + bi * m * k;
            const S* bp = B.data.data() + (b_broadcast ? 0 : bi * k * nn);
            const S* gp = G.data.data() + bi * m * nn;
            if (an.requires_grad) {
                // dA += G * B^T
                transpose2d(bp, bt.data(), k, nn);
                gemm_acc(gp, bt.data(), an.grad.data.data() + bi * m * k, m, nn, k);
            }
            if (bn.requires_grad) {
                // dB += A^T * G (accumulates across batches when broadcast)
                transpose2d(ap, at.data(), m, k);
                gemm_acc(at.data(), gp,
                         bn.grad.data.data() + (b_broadcast ? 0 : bi * k * nn), k, m, nn);
            }
        }
    }

    void backprop_layer_norm(Node& n) {
        Node& xn = node(n.args[0]);
        Node& gn = node(n.args[1]);
        Node& bn = node(n.args[2]);
        const Tensor<S>& x = xn.value;
        const Tensor<S>& gain = gn.value;
        const Tensor<S>& g = n.grad;
        const std::size_t d = x.shape.back();
        const std::size_t tokens = x.size() / d;
        const S eps = n.saux;
        for (std::size_t t = 0; t < tokens; ++t) {
            const S* in = x.data.data() + t * d;
            const S* gr = g.data.data() + t * d;
            S mean = S(0);
            for (std::size_t j = 0; j < d; ++j) mean += in[j];
            mean /= static_cast<S>(d);
            S var = S(0);
            for (std::size_t j = 0; j < d; ++j) {
                const S c = in[j] - mean;
                var += c * c;
            }
            var /= static_cast<S>(d);
            const S rstd = S(1) / static_cast<S>(std::sqrt(static_cast<double>(var + eps)));
            if (gn.requires_grad || bn.requires_grad) {
                for (std::size_t j = 0; j < d; ++j) {
                    const S xhat = (in[j] - mean) * rstd;
                    if (gn.requires_grad) gn.grad.data[j] += gr[j] * xhat;
                    if (bn.requires_grad) bn.grad.data[j] += gr[j];
                }
            }
            if (xn.requires_grad) {
                S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                for (std::size_t j = 0; j < d; ++j) {
                    const S xhat = (in[j] - mean) * rstd;
                    const S dxhat = gr[j] * gain.data[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= static_cast<S>(d);
                mean_dxhat_xhat /= static_cast<S>(d);
                S* dx = xn.grad.data.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) {
                    const S xhat = (in[j] - mean) * rstd;
                    const S dxhat = gr[j] * gain.data[j];
                    dx[j] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    }
};

}  // namespace ive
