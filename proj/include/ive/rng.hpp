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

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ive {

/// splitmix64 mixing step; used to derive stream ids from (seed, label).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent stream id from a base seed and a label.
/// Every module draws from Rng(seed, derive_stream(seed, label)) so that
/// adding draws in one module never shifts another module's sequence.
inline std::uint64_t derive_stream(std::uint64_t seed, std::string_view label) {
    return splitmix64(seed ^ fnv1a64(label));
}

inline std::uint64_t derive_stream(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ fnv1a64(label)) + index);
}

/// PCG32 (O'Neill): 64-bit LCG state, xorshift-rotate output.
/// Chosen for its tiny serializable state; all training-time sampling goes
/// through this generator so runs are reproducible from (seed, stream).
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    /// Uniform in [0, n).
    std::uint32_t below(std::uint32_t n) {
        // Lemire-style rejection keeps the distribution exact.
        std::uint64_t m = static_cast<std::uint64_t>(next_u32()) * n;
        std::uint32_t lo = static_cast<std::uint32_t>(m);
        if (lo < n) {
            std::uint32_t t = (0u - n) % n;
            while (lo < t) {
                m = static_cast<std::uint64_t>(next_u32()) * n;
                lo = static_cast<std::uint32_t>(m);
            }
        }
        return static_cast<std::uint32_t>(m >> 32);
    }

    /// Uniform in [0, 1) with 24 bits of mantissa (exact in float and double).
    double u01() { return static_cast<double>(next_u32() >> 8) * (1.0 / 16777216.0); }

    /// Standard normal via Box-Muller; second value cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = u01();
        } while (u1 <= 0.0);
        double u2 = u01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t state() const { return state_; }
    std::uint64_t inc() const { return inc_; }
    void restore(std::uint64_t state, std::uint64_t inc) {
        state_ = state;
        inc_ = inc;
        have_spare_ = false;
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 1;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// The canonical way to obtain a module- or step-local generator.
inline Rng make_rng(std::uint64_t seed, std::string_view label) {
    return Rng(seed, derive_stream(seed, label));
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    return Rng(seed, derive_stream(seed, label, index));
}

}  // namespace ive
