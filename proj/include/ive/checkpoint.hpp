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
#include <filesystem>
#include <map>
#include <string>

#include "ive/backbone.hpp"
#include "ive/model_state.hpp"
#include "ive/predict_update.hpp"

namespace ive {

enum class TrainPhase { Pretrain, EditTrain };

std::string to_string(TrainPhase phase);
TrainPhase parse_phase(const std::string& name);

/// Hyperparameters for one training run. Phase-2 defaults follow the
/// protocol this project reproduces (lr 1e-5, batch 16, 5 epochs); the
/// phase-1 numbers are our own calibration.
struct TrainConfig {
    TrainPhase phase = TrainPhase::EditTrain;
    double learning_rate = 1e-5;  // zero is legal as a diagnostic no-op probe
    std::size_t batch_size = 16;
    std::size_t epochs = 5;      // phase-2 passes over the pair corpus
    std::size_t steps = 3000;    // phase-1 total optimizer steps
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    AblationMode ablation = AblationMode::Full;
    std::size_t log_every = 50;  // frozen-digest audit & loss log cadence
    std::string checkpoint_path; // empty: keep the result in memory only
    DiTConfig model;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

/// SHA-256 of the canonical JSON form; pins configs in reports/fixtures.
std::string config_digest(const TrainConfig& cfg);

/// First-moment/second-moment registry for Adam, lazily sized. `t` is the
/// number of steps taken (bias correction uses it).
struct AdamState {
    std::map<std::string, Tensor<float>> m, v;
    std::uint64_t t = 0;
};

/// One bias-corrected Adam update over every name in `grads`; parameters
/// missing from `grads` (frozen or out of mode) are untouched. Arithmetic
/// runs in 64-bit per element, then rounds once to 32-bit storage.
void adam_step(ParamStore<float>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps);

/// A resumable training state: parameters (with freezing), optimizer
/// moments, and the step counter. All run randomness is derived from
/// (config.seed, step), so the counter doubles as the generator state.
struct Checkpoint {
    TrainConfig config;
    std::uint64_t step = 0;
    ParamStore<float> params;
    AdamState opt;
};

/// File format: magic "IVE1", little-endian u64 header length, UTF-8 JSON
/// header (config echo, step, tensor directory with name/shape/offset/
/// CRC32/frozen flag/role), then raw little-endian 32-bit-float blobs.
/// Writes are atomic (temp file + rename). Load verifies magic and every
/// checksum; errors: CorruptManifest, TruncatedBlob, ChecksumMismatch.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Digest of the full training state (parameters, frozen set, moments,
/// step); equal digests mean bitwise-identical continuation.
std::string checkpoint_digest(const Checkpoint& ckpt);

}  // namespace ive
