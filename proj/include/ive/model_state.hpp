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

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ive/attention.hpp"
#include "ive/tape.hpp"
#include "ive/tensor.hpp"

namespace ive {

/// Named parameter set partitioned into frozen and trainable subsets.
/// std::map keeps iteration order deterministic, which every digest,
/// checkpoint, and optimizer loop relies on.
template <class S>
struct ParamStore {
    std::map<std::string, Tensor<S>> tensors;
    std::set<std::string> frozen;

    void add(const std::string& name, Tensor<S> t, bool freeze) {
        if (tensors.count(name)) throw IncompatibleShapes("duplicate parameter " + name);
        tensors.emplace(name, std::move(t));
        if (freeze) frozen.insert(name);
    }

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    bool is_frozen(const std::string& name) const { return frozen.count(name) != 0; }

    Tensor<S>& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IncompatibleShapes("unknown parameter " + name);
        return it->second;
    }
    const Tensor<S>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IncompatibleShapes("unknown parameter " + name);
        return it->second;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors.size());
        for (const auto& [k, v] : tensors) out.push_back(k);
        return out;
    }
    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : tensors)
            if (!frozen.count(k)) out.push_back(k);
        return out;
    }
    std::vector<std::string> frozen_names() const {
        return {frozen.begin(), frozen.end()};
    }
};

/// Converts every tensor (used for the 64-bit gradient-check mode).
template <class From, class To>
ParamStore<To> cast_store(const ParamStore<From>& in) {
    ParamStore<To> out;
    for (const auto& [name, t] : in.tensors)
        out.add(name, t.template cast<To>(), in.frozen.count(name) != 0);
    return out;
}

std::string sha256_hex(const void* data, std::size_t n);

/// SHA-256 over the tensor's shape (as little-endian u64 extents) followed by
/// its raw scalar bytes; bitwise-identical tensors and only those collide.
template <class S>
std::string tensor_digest(const Tensor<S>& t);

/// name -> digest of every frozen tensor; the trainer re-checks these during
/// and after phase-2 runs.
template <class S>
std::map<std::string, std::string> frozen_digests(const ParamStore<S>& store);

/// One digest summarizing every tensor (params of any kind), for reports.
template <class S>
std::string store_digest(const ParamStore<S>& store);

/// Tape handles for every parameter of a store, plus typed accessors used by
/// the model code. Trainable parameters participate in gradients only when
/// the store was bound with train == true.
template <class S>
struct BoundParams {
    std::map<std::string, typename Tape<S>::Id> ids;

    typename Tape<S>::Id at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw IncompatibleShapes("parameter not bound: " + name);
        return it->second;
    }
    MhaParams<S> mha_at(const std::string& prefix, std::size_t heads) const {
        return {at(prefix + ".wq"), at(prefix + ".wk"), at(prefix + ".wv"), at(prefix + ".wo"),
                heads};
    }
    LayerNormParams<S> ln_at(const std::string& prefix) const {
        return {at(prefix + ".g"), at(prefix + ".b")};
    }
    ZeroLinParams<S> zlin_at(const std::string& prefix) const {
        return {at(prefix + ".w"), at(prefix + ".b")};
    }
    GateProjParams<S> gate_at(const std::string& prefix) const {
        return {at(prefix + ".w1"), at(prefix + ".b1"), at(prefix + ".w2"), at(prefix + ".b2")};
    }
};

/// Inserts every tensor of the store into the tape. Frozen tensors never
/// require gradients; trainable ones do iff train is set.
template <class S>
BoundParams<S> bind_params(Tape<S>& t, const ParamStore<S>& store, bool train);

}  // namespace ive
