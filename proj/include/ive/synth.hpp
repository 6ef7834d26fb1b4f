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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ive/rng.hpp"
#include "ive/tensor.hpp"

namespace ive {

/// Procedural scene and edit-pair generator over a 16x16 RGB canvas.
///
/// Scenes are drawn from a small discrete space (environment x objects),
/// rasterized exactly on the integer grid, and described by token prompts
/// from a fixed grammar. Every image is a pure function of its scene, so
/// edit pairs come with exact pixel-difference masks for free.

constexpr int kCanvas = 16;
constexpr int kImageChannels = 3;

constexpr int kNumEnvs = 8;     // muted background palettes
constexpr int kNumColors = 6;   // saturated object colors
constexpr int kNumShapes = 6;   // {rect, circle, bar} x {small, large}
constexpr int kNumAnchors = 5;  // center + four corners
constexpr int kNumStyles = 2;   // invert, brighten

/// Prompt grammar over the shared model vocabulary. Token 0 is PAD; the
/// ranges below never overlap and all fit in a 64-entry table:
///   [1,9)   environment      (one per scene, first token)
///   [9,15)  object color     -+
///   [15,21) object shape      |  one triple per object, canonical order
///   [21,26) object position  -+
///   [26,28) global style     (optional last token)
constexpr std::int64_t kEnvTokenBase = 1;
constexpr std::int64_t kColorTokenBase = 9;
constexpr std::int64_t kShapeTokenBase = 15;
constexpr std::int64_t kPosTokenBase = 21;
constexpr std::int64_t kStyleTokenBase = 26;

/// Background RGB for an environment id; components are multiples of 1/16,
/// so style arithmetic on them stays exact in 32-bit floats.
std::array<float, 3> env_color(int env);

/// Saturated RGB for an object color id; disjoint from every background.
std::array<float, 3> object_color(int color);

/// Anchor center (row, col) for a position id.
std::array<int, 2> anchor_center(int pos);

/// Pixel offsets of a shape relative to its anchor center.
std::vector<std::array<int, 2>> shape_offsets(int shape);

/// One placed object: palette/shape/anchor indices.
struct ObjectSpec {
    int color = 0;  // [0, kNumColors)
    int shape = 0;  // [0, kNumShapes)
    int pos = 0;    // [0, kNumAnchors)

    bool operator==(const ObjectSpec&) const = default;
};

/// A complete scene description. `seed` is provenance (it keys derived
/// randomness such as video motion) and is ignored by
/// same_scene_description.
struct SceneSpec {
    int env = 0;                     // [0, kNumEnvs)
    std::vector<ObjectSpec> objects; // canonical order, at most 2
    int style = -1;                  // -1 none, 0 invert, 1 brighten
    std::uint64_t seed = 0;

    bool operator==(const SceneSpec&) const = default;
};

/// Field-level equality ignoring the provenance seed.
bool same_scene_description(const SceneSpec& a, const SceneSpec& b);

/// Sorts objects by (position, shape, color) so that equal scene contents
/// always produce the same prompt.
void canonicalize(SceneSpec& scene);

/// True when every object lies fully inside the canvas, no object color
/// equals the background color, and object footprints are pairwise
/// disjoint (disjointness keeps prompts unambiguous and masks exact).
bool scene_valid(const SceneSpec& scene);

/// The discrete sampling space; shrink the ranges to build enumerable
/// corners of the space for tests. Object counts must stay within [0,2]
/// so every description fits the prompt budget.
struct SceneSpace {
    int envs = kNumEnvs;
    int colors = kNumColors;
    int shapes = kNumShapes;
    int anchors = kNumAnchors;
    std::vector<int> object_counts = {1, 2};

    void validate() const;
};

/// Rejection-sampling counters for build_scenes.
struct SamplingStats {
    std::size_t draws = 0;     // uniform proposals taken
    std::size_t accepted = 0;  // proposals that passed scene_valid
};

/// Draws n valid scenes by uniform proposal + rejection over the space.
/// Each scene gets an independent per-index seed, so the corpus is
/// insensitive to generation order. Throws ExhaustedSampling when one
/// scene rejects kMaxSceneAttempts proposals in a row.
constexpr std::size_t kMaxSceneAttempts = 10000;
std::vector<SceneSpec> build_scenes(std::size_t n, std::uint64_t seed,
                                    const SceneSpace& space = {},
                                    SamplingStats* stats = nullptr);

/// Unpadded prompt tokens describing a scene (at most 8 tokens).
std::vector<std::int64_t> prompt_tokens(const SceneSpec& scene);

/// Inverse of prompt_tokens (trailing PAD tolerated, seed not recovered).
/// Throws DomainError on anything outside the grammar.
SceneSpec decode_prompt(const std::vector<std::int64_t>& tokens);

/// Exact rasterization: background fill, object compositing, then the
/// optional global style. Returns [3,16,16] with values in [0,1].
Tensor<float> render(const SceneSpec& scene);

/// A short clip: one object of the scene translates with constant integer
/// velocity (clamped at the canvas walls); the rest hold still.
struct VideoClip {
    Tensor<float> frames;               // [F,3,16,16]
    std::vector<std::int64_t> caption;  // prompt of the base scene
    int mover = 0;                      // index of the moving object
    int vy = 0, vx = 0;                 // per-frame translation

    // bit-level frame equality, so round-trips are exact by definition
    bool operator==(const VideoClip& o) const {
        return bitwise_equal(frames, o.frames) && caption == o.caption && mover == o.mover &&
               vy == o.vy && vx == o.vx;
    }
};

/// Renders `frames` frames. Mover and velocity derive from scene.seed;
/// velocities that would collide with a static object are rejected in a
/// seeded order, falling back to a static clip. Every frame satisfies
/// scene_valid geometry.
VideoClip render_video(const SceneSpec& scene, std::size_t frames);

enum class EditKind { Recolor, AddObject, RemoveObject, BackgroundSwap, GlobalStyle };

std::string to_string(EditKind kind);
EditKind parse_edit_kind(const std::string& name);

/// True for the object-level tasks whose masks must stay small and
/// non-empty (the scene-level tasks repaint most of the canvas).
bool edit_is_local(EditKind kind);

struct EditTask {
    EditKind kind = EditKind::Recolor;
    int object_index = -1;   // Recolor / RemoveObject
    int new_color = -1;      // Recolor
    ObjectSpec new_object{}; // AddObject
    int new_env = -1;        // BackgroundSwap
    int style = -1;          // GlobalStyle

    bool operator==(const EditTask&) const = default;
};

/// Applies the task to the scene description and re-canonicalizes.
/// Throws InapplicableTask when preconditions fail (missing object, color
/// unchanged, overlapping insertion, prompt budget exceeded, ...).
SceneSpec apply_task(const SceneSpec& scene, const EditTask& task);

/// Draws a uniformly chosen applicable task with uniformly drawn valid
/// arguments.
EditTask sample_task(const SceneSpec& scene, Rng& rng);

/// A source/edited image pair with its exact difference mask. The mask is
/// evaluation ground truth only; the model never sees it.
struct EditPairSample {
    Tensor<float> src_image;   // [3,16,16]
    Tensor<float> edit_image;  // [3,16,16]
    std::vector<std::int64_t> src_prompt;
    std::vector<std::int64_t> edit_prompt;
    Tensor<float> edit_mask;   // [1,16,16], 1 where any channel differs
    SceneSpec scene;
    EditTask task;

    // bit-level image equality, so round-trips are exact by definition
    bool operator==(const EditPairSample& o) const {
        return bitwise_equal(src_image, o.src_image) && bitwise_equal(edit_image, o.edit_image) &&
               bitwise_equal(edit_mask, o.edit_mask) && src_prompt == o.src_prompt &&
               edit_prompt == o.edit_prompt && scene == o.scene && task == o.task;
    }
};

/// Renders the scene before and after the task; the mask is the exact
/// pixelwise difference support.
EditPairSample synth_pair(const SceneSpec& scene, const EditTask& task);

struct FilterDecision {
    std::size_t index = 0;
    std::string reason;
};

struct FilterReport {
    std::vector<EditPairSample> accepted;
    std::vector<FilterDecision> rejected;
};

/// Acceptance rules: outside the mask the images must match bitwise
/// ("non-edit-region mismatch"), local tasks must touch something ("empty
/// mask"), and local masks must cover 1% to 90% of the canvas ("mask
/// coverage out of range").
FilterReport filter_pairs(const std::vector<EditPairSample>& samples);

/// End-to-end corpora: scenes, tasks, pairs/clips, all from per-index seed
/// streams. Every emitted pair passes filter_pairs by construction.
std::vector<EditPairSample> make_edit_dataset(std::size_t n, std::uint64_t seed,
                                              const SceneSpace& space = {});
std::vector<VideoClip> make_video_dataset(std::size_t n, std::size_t frames, std::uint64_t seed,
                                          const SceneSpace& space = {});

}  // namespace ive
