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

#include <stdexcept>
#include <string>

namespace ive {

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error("ShapeMismatch: " + what) {}
};

struct InvalidAxis : std::runtime_error {
    explicit InvalidAxis(const std::string& what) : std::runtime_error("InvalidAxis: " + what) {}
};

struct EmptyMask : std::runtime_error {
    explicit EmptyMask(const std::string& what) : std::runtime_error("EmptyMask: " + what) {}
};

struct DisconnectedGraph : std::runtime_error {
    explicit DisconnectedGraph(const std::string& what)
        : std::runtime_error("DisconnectedGraph: " + what) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error("DomainError: " + what) {}
};

struct NonFiniteState : std::runtime_error {
    explicit NonFiniteState(const std::string& what)
        : std::runtime_error("NonFiniteState: " + what) {}
};

struct NonFiniteLoss : std::runtime_error {
    explicit NonFiniteLoss(const std::string& what) : std::runtime_error("NonFiniteLoss: " + what) {}
};

struct FrozenParamDrift : std::runtime_error {
    explicit FrozenParamDrift(const std::string& what)
        : std::runtime_error("FrozenParamDrift: " + what) {}
};

struct IncompatibleShapes : std::runtime_error {
    explicit IncompatibleShapes(const std::string& what)
        : std::runtime_error("IncompatibleShapes: " + what) {}
};

struct InapplicableTask : std::runtime_error {
    explicit InapplicableTask(const std::string& what)
        : std::runtime_error("InapplicableTask: " + what) {}
};

struct ExhaustedSampling : std::runtime_error {
    explicit ExhaustedSampling(const std::string& what)
        : std::runtime_error("ExhaustedSampling: " + what) {}
};

struct CorruptManifest : std::runtime_error {
    explicit CorruptManifest(const std::string& what)
        : std::runtime_error("CorruptManifest: " + what) {}
};

struct TruncatedBlob : std::runtime_error {
    explicit TruncatedBlob(const std::string& what) : std::runtime_error("TruncatedBlob: " + what) {}
};

struct ChecksumMismatch : std::runtime_error {
    explicit ChecksumMismatch(const std::string& what)
        : std::runtime_error("ChecksumMismatch: " + what) {}
};

struct MissingPrompt : std::runtime_error {
    explicit MissingPrompt(const std::string& what) : std::runtime_error("MissingPrompt: " + what) {}
};

struct InvalidMode : std::runtime_error {
    explicit InvalidMode(const std::string& what) : std::runtime_error("InvalidMode: " + what) {}
};

}  // namespace ive
