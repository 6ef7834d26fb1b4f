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
#include <map>
#include <string>
#include <vector>

#include "ive/checkpoint.hpp"
#include "ive/flow.hpp"
#include "ive/synth.hpp"

namespace ive {

/// Number of leading/trailing losses averaged into the report windows.
inline constexpr std::size_t kLossWindow = 50;

/// Scalar trace of one training call. `losses` holds one entry per optimizer
/// step taken by this call (a resumed run reports only its own tail).
struct TrainReport {
    std::vector<double> losses;
    double initial_window = 0.0;  // mean of the first min(kLossWindow, n) losses
    double final_window = 0.0;    // mean of the last min(kLossWindow, n) losses
    double heldout_initial = 0.0;  // pretraining only: held-out loss before
    double heldout_final = 0.0;    // pretraining only: held-out loss after
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainReport report;
};

/// Frame counts cycled over pretraining steps so the backbone sees every
/// clip length it must handle at inference time.
inline constexpr std::size_t kFrameSchedule[] = {1, 2, 4, 8};

/// Rows per pretraining step: the batch shrinks as the frame count grows so
/// long-clip steps stay affordable (attention cost is quadratic in frames).
inline std::size_t pretrain_rows(std::size_t batch_size, std::size_t frames) {
    const std::size_t rows = batch_size / frames;
    return rows < 1 ? 1 : rows;
}

/// Phase 1: trains a fresh backbone (no adapters) with the plain
/// flow-matching loss on the clip corpus. The last tenth of the corpus
/// (at most 64 clips) is held out; the report carries the held-out loss
/// before and after training, evaluated with identical noise draws.
/// Throws NonFiniteLoss after saving the last good state (when cfg names a
/// checkpoint path).
TrainResult pretrain_backbone(const TrainConfig& cfg, const std::vector<VideoClip>& clips);

/// The held-out evaluation used by pretrain_backbone: mean flow-matching
/// loss over the clips, one clip per forward, with (t, noise) for clip i
/// drawn from a stream keyed by (seed, "heldout", i) so repeated calls are
/// paired.
double heldout_fm_loss(const DiTConfig& cfg, const ParamStore<float>& params,
                       const std::vector<VideoClip>& clips, std::uint64_t seed);

/// Freezes every backbone tensor and attaches the per-block adapters with
/// inherited attention weights (see attach_pu_params). The result has a
/// fresh optimizer state and step 0; its config echoes the backbone's.
Checkpoint attach_and_inherit(const Checkpoint& backbone, std::uint64_t seed);

/// Rechecks a digest snapshot (from frozen_digests) against the live store.
/// Throws FrozenParamDrift naming the first tensor that changed, vanished,
/// or thawed.
void verify_frozen(const ParamStore<float>& params,
                   const std::map<std::string, std::string>& expected);

/// Phase 2: optimizes the adapter parameters admitted by cfg.ablation on
/// stacked [source; target] batches with the target-masked flow-matching
/// loss; the frozen backbone is digest-audited every cfg.log_every steps
/// and at the end. Training runs from start.step to epochs * floor(pairs /
/// batch_size) steps; a checkpoint saved mid-run resumes bitwise because
/// each step's randomness depends only on (cfg.seed, step).
TrainResult train_edit(const TrainConfig& cfg, const std::vector<EditPairSample>& pairs,
                       const Checkpoint& start);

struct AblationRun {
    AblationMode mode;
    TrainResult result;
};

/// Runs phase 2 once per ablation mode, each from a fresh attach of the
/// same backbone checkpoint with the same seed and pair corpus.
std::vector<AblationRun> run_ablation(const TrainConfig& cfg,
                                      const std::vector<EditPairSample>& pairs,
                                      const Checkpoint& backbone);

}  // namespace ive
