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
#include <vector>

#include "ive/flow.hpp"
#include "ive/synth.hpp"

namespace ive {

/// Mean squared error between two [C,H,W] images restricted to the pixels
/// the [1,H,W] mask selects (nonzero entries when `inside`, zero entries
/// otherwise); every channel of a selected pixel contributes. Throws
/// EmptyMask when the selection is empty and ShapeMismatch on disagreeing
/// extents.
double masked_mse(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask,
                  bool inside);

/// Peak signal-to-noise ratio in dB for unit-range images: 10*log10(1/mse).
/// Throws DomainError for mse <= 0 (a zero error is reported through the
/// "exact" sentinel instead, never as a number).
double psnr_db(double mse);

/// Mean over adjacent frame pairs of the per-pixel squared difference for a
/// [F,C,H,W] video; needs F >= 2.
double adjacent_frame_mse(const Tensor<float>& video);

/// Per-pair edit metrics over a held-out set. Outputs are retained for
/// auditing and image dumps.
struct EditEval {
    std::vector<Tensor<float>> outputs;  // sampled edited image per pair, [C,H,W]
    std::vector<double> edit_mse;        // vs ground-truth edit, inside the mask
    std::vector<double> preserve_mse;    // vs source, outside the mask (0 if undefined)
    std::vector<std::uint8_t> preserve_defined;  // false when the mask covers every pixel
    std::vector<std::uint8_t> preserve_exact;    // true when the outside region matches exactly

    double mean_edit_mse = 0.0;
    double mean_preserve_psnr_db = 0.0;  // over defined, non-exact pairs
    std::size_t preserve_exact_count = 0;
    std::size_t psnr_pair_count = 0;  // pairs entering the PSNR mean
};

/// Runs one F=1 edit per pair (noise from (seed, "eval_noise", index)) and
/// scores fidelity inside the ground-truth mask plus preservation outside
/// it. The mask is measurement-only; the model never sees it.
EditEval eval_edit_pairs(const DiTConfig& cfg, const ParamStore<float>& params, AblationMode mode,
                         const std::vector<EditPairSample>& pairs, std::uint64_t seed,
                         const SamplerConfig& scfg);

/// Adjacent-frame stability of edits applied to static scenes replicated
/// over `frames` frames.
struct TemporalEval {
    std::size_t frames = 0;
    std::vector<double> adjacent_mse;  // one value per video
    double mean_adjacent_mse = 0.0;
};

TemporalEval eval_temporal_consistency(const DiTConfig& cfg, const ParamStore<float>& params,
                                       AblationMode mode,
                                       const std::vector<EditPairSample>& pairs,
                                       std::size_t frames, std::uint64_t seed,
                                       const SamplerConfig& scfg);

/// Recomputes the metrics of `count` seed-chosen pairs with independent
/// (reverse-order, long-double) arithmetic and throws DomainError on any
/// disagreement beyond accumulation noise.
void self_audit(const EditEval& eval, const std::vector<EditPairSample>& pairs,
                std::uint64_t seed, std::size_t count = 5);

/// Everything a run reports. All fields are pure functions of (checkpoint,
/// dataset, seed, flags) except `timestamp`, which is isolated here so byte
/// comparisons can exclude exactly one field.
struct EvalReport {
    int version = 1;
    std::string command;
    std::string config_digest;
    std::string checkpoint_digest;
    std::string dataset_digest;
    std::string mode;
    std::uint64_t seed = 0;
    std::string timestamp;

    EditEval edit;                       // leave empty when unused
    std::vector<TemporalEval> temporal;  // one entry per frame count
    std::vector<double> loss_curve;      // training losses, optional
    double loss_initial_window = 0.0;
    double loss_final_window = 0.0;
    std::map<std::string, double> scalars;  // run-specific named numbers
};

/// Canonical JSON rendering: {version, command, config_digest,
/// checkpoint_digest, mode, seed, timestamp, metrics{...}, per_sample[...]}.
/// Deterministic for fixed inputs; "exact" preservation appears as the
/// string sentinel instead of a number.
std::string report_json(const EvalReport& report);

/// Atomic write of report_json to `path`.
void write_report(const std::filesystem::path& path, const EvalReport& report);

/// Per-pair table flattened to CSV (header + one row per pair).
std::string per_sample_csv(const EditEval& eval);

/// Binary 8-bit PPM (P6) from a [3,H,W] image; values clamp to [0,1] and
/// round to nearest.
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace ive
