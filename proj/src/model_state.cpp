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

#include "ive/model_state.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <stdexcept>

namespace ive {

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, data, n) == 1 &&
              EVP_DigestFinal_ex(ctx, md, &md_len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out(md_len * 2, '0');
    for (unsigned int i = 0; i < md_len; ++i) {
        out[2 * i] = hex[md[i] >> 4];
        out[2 * i + 1] = hex[md[i] & 0xf];
    }
    return out;
}

namespace {

void append_u64_le(std::vector<unsigned char>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

}  // namespace

template <class S>
std::string tensor_digest(const Tensor<S>& t) {
    std::vector<unsigned char> buf;
    buf.reserve(8 * (t.shape.size() + 1) + t.data.size() * sizeof(S));
    append_u64_le(buf, t.shape.size());
    for (std::size_t e : t.shape) append_u64_le(buf, e);
    const std::size_t before = buf.size();
    buf.resize(before + t.data.size() * sizeof(S));
    if (!t.data.empty()) std::memcpy(buf.data() + before, t.data.data(), t.data.size() * sizeof(S));
    return sha256_hex(buf.data(), buf.size());
}

template <class S>
std::map<std::string, std::string> frozen_digests(const ParamStore<S>& store) {
    std::map<std::string, std::string> out;
    for (const auto& name : store.frozen) out.emplace(name, tensor_digest(store.at(name)));
    return out;
}

template <class S>
std::string store_digest(const ParamStore<S>& store) {
    std::string cat;
    for (const auto& [name, t] : store.tensors) {
        cat += name;
        cat += '=';
        cat += tensor_digest(t);
        cat += '\n';
    }
    return sha256_hex(cat.data(), cat.size());
}

template <class S>
BoundParams<S> bind_params(Tape<S>& t, const ParamStore<S>& store, bool train) {
    BoundParams<S> out;
    for (const auto& [name, tensor] : store.tensors) {
        const bool wants_grad = train && !store.frozen.count(name);
        out.ids.emplace(name, t.input(tensor, wants_grad));
    }
    return out;
}

template std::string tensor_digest<float>(const Tensor<float>&);
template std::string tensor_digest<double>(const Tensor<double>&);
template std::map<std::string, std::string> frozen_digests<float>(const ParamStore<float>&);
template std::map<std::string, std::string> frozen_digests<double>(const ParamStore<double>&);
template std::string store_digest<float>(const ParamStore<float>&);
template std::string store_digest<double>(const ParamStore<double>&);
template BoundParams<float> bind_params<float>(Tape<float>&, const ParamStore<float>&, bool);
template BoundParams<double> bind_params<double>(Tape<double>&, const ParamStore<double>&, bool);

}  // namespace ive
