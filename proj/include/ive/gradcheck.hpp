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
#include <string>
#include <vector>

#include "ive/tensor.hpp"

namespace ive {

/// Scalar loss as a function of a set of input tensors (rebuilt per call).
using ScalarFn = std::function<double(const std::vector<Tensor<double>>&)>;

/// Central-difference gradient of f w.r.t. inputs[wrt], element by element.
/// h must lie in [1e-7, 1e-3].
Tensor<double> finite_diff_grad(const ScalarFn& f, const std::vector<Tensor<double>>& inputs,
                                std::size_t wrt, double h = 1e-5);

/// max|a - b| / max(max|a|, max|b|, 1); shapes must agree.
double rel_error(const Tensor<double>& a, const Tensor<double>& b);

struct GradCheckEntry {
    std::string name;
    double rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Compares tape gradients against finite differences for every op and for an
/// end-to-end pass through the full editing model, all in 64-bit.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed);

bool gradcheck_all_pass(const std::vector<GradCheckEntry>& entries);

}  // namespace ive
