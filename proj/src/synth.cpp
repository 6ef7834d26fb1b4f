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

#include "ive/synth.hpp"

#include <algorithm>
#include <tuple>

#include "ive/errors.hpp"

namespace ive {

namespace {

constexpr std::size_t kMaxArgAttempts = 1000;

/// An object resolved to a concrete center; videos move centers off-anchor.
struct Placed {
    int color = 0;
    int shape = 0;
    int cy = 0, cx = 0;
};

Placed place(const ObjectSpec& o) {
    const auto c = anchor_center(o.pos);
    return {o.color, o.shape, c[0], c[1]};
}

bool inside_canvas(const Placed& p) {
    for (const auto& d : shape_offsets(p.shape)) {
        const int r = p.cy + d[0], c = p.cx + d[1];
        if (r < 0 || r >= kCanvas || c < 0 || c >= kCanvas) return false;
    }
    return true;
}

bool overlap(const Placed& a, const Placed& b) {
    bool grid[kCanvas][kCanvas] = {};
    for (const auto& d : shape_offsets(a.shape)) grid[a.cy + d[0]][a.cx + d[1]] = true;
    for (const auto& d : shape_offsets(b.shape))
        if (grid[b.cy + d[0]][b.cx + d[1]]) return true;
    return false;
}

bool placed_valid(int env, const std::vector<Placed>& objs) {
    // Everything must be on-canvas before any overlap rasterization.
    for (const auto& o : objs) {
        if (!inside_canvas(o)) return false;
        if (object_color(o.color) == env_color(env)) return false;
    }
    for (std::size_t i = 0; i < objs.size(); ++i)
        for (std::size_t j = i + 1; j < objs.size(); ++j)
            if (overlap(objs[i], objs[j])) return false;
    return true;
}

void apply_style(Tensor<float>& img, int style) {
    if (style < 0) return;
    if (style == 0) {
        for (auto& v : img.data) v = 1.0f - v;
    } else {
        for (auto& v : img.data) v = std::min(v + 0.25f, 1.0f);
    }
}

Tensor<float> render_placed(int env, const std::vector<Placed>& objs, int style) {
    Tensor<float> img({kImageChannels, kCanvas, kCanvas});
    const auto bg = env_color(env);
    for (int ch = 0; ch < kImageChannels; ++ch)
        for (int i = 0; i < kCanvas * kCanvas; ++i)
            img.data[static_cast<std::size_t>(ch * kCanvas * kCanvas + i)] = bg[static_cast<std::size_t>(ch)];
    for (const auto& o : objs) {
        const auto col = object_color(o.color);
        for (const auto& d : shape_offsets(o.shape)) {
            const int r = o.cy + d[0], c = o.cx + d[1];
            for (int ch = 0; ch < kImageChannels; ++ch)
                img.data[static_cast<std::size_t>((ch * kCanvas + r) * kCanvas + c)] =
                    col[static_cast<std::size_t>(ch)];
        }
    }
    apply_style(img, style);
    return img;
}

ObjectSpec draw_object(const SceneSpace& space, Rng& rng) {
    ObjectSpec o;
    o.color = static_cast<int>(rng.below(static_cast<std::uint32_t>(space.colors)));
    o.shape = static_cast<int>(rng.below(static_cast<std::uint32_t>(space.shapes)));
    o.pos = static_cast<int>(rng.below(static_cast<std::uint32_t>(space.anchors)));
    return o;
}

/// One uniform proposal from the raw space (no validity applied).
SceneSpec propose_scene(const SceneSpace& space, Rng& rng) {
    SceneSpec s;
    s.env = static_cast<int>(rng.below(static_cast<std::uint32_t>(space.envs)));
    const std::size_t pick = rng.below(static_cast<std::uint32_t>(space.object_counts.size()));
    const int k = space.object_counts[pick];
    for (int i = 0; i < k; ++i) s.objects.push_back(draw_object(space, rng));
    return s;
}

SceneSpec draw_scene(const SceneSpace& space, Rng& rng, SamplingStats* stats) {
    for (std::size_t attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
        SceneSpec s = propose_scene(space, rng);
        if (stats) ++stats->draws;
        if (scene_valid(s)) {
            if (stats) ++stats->accepted;
            canonicalize(s);
            return s;
        }
    }
    throw ExhaustedSampling("draw_scene: no valid scene in " + std::to_string(kMaxSceneAttempts) +
                            " proposals");
}

bool in_range(std::int64_t tok, std::int64_t base, int count) {
    return tok >= base && tok < base + count;
}

std::vector<Placed> place_all(const SceneSpec& scene) {
    std::vector<Placed> out;
    out.reserve(scene.objects.size());
    for (const auto& o : scene.objects) out.push_back(place(o));
    return out;
}

}  // namespace

std::array<float, 3> env_color(int env) {
    // Muted palettes; every component is a multiple of 1/16.
    static constexpr std::array<std::array<float, 3>, kNumEnvs> table = {{
        {0.5f, 0.4375f, 0.375f},    // warm gray
        {0.375f, 0.4375f, 0.5f},    // cool gray
        {0.375f, 0.4375f, 0.25f},   // olive
        {0.625f, 0.5625f, 0.375f},  // sand
        {0.4375f, 0.375f, 0.5625f}, // dusk
        {0.375f, 0.5f, 0.4375f},    // sage
        {0.5625f, 0.375f, 0.3125f}, // clay
        {0.3125f, 0.375f, 0.4375f}, // slate
    }};
    if (env < 0 || env >= kNumEnvs) throw DomainError("env_color: id out of range");
    return table[static_cast<std::size_t>(env)];
}

std::array<float, 3> object_color(int color) {
    static constexpr std::array<std::array<float, 3>, kNumColors> table = {{
        {1.0f, 0.0f, 0.0f},  // red
        {0.0f, 1.0f, 0.0f},  // green
        {0.0f, 0.0f, 1.0f},  // blue
        {1.0f, 1.0f, 0.0f},  // yellow
        {1.0f, 0.0f, 1.0f},  // magenta
        {0.0f, 1.0f, 1.0f},  // cyan
    }};
    if (color < 0 || color >= kNumColors) throw DomainError("object_color: id out of range");
    return table[static_cast<std::size_t>(color)];
}

std::array<int, 2> anchor_center(int pos) {
    static constexpr std::array<std::array<int, 2>, kNumAnchors> table = {{
        {8, 8},    // center
        {4, 4},    // north-west
        {4, 11},   // north-east
        {11, 4},   // south-west
        {11, 11},  // south-east
    }};
    if (pos < 0 || pos >= kNumAnchors) throw DomainError("anchor_center: id out of range");
    return table[static_cast<std::size_t>(pos)];
}

std::vector<std::array<int, 2>> shape_offsets(int shape) {
    std::vector<std::array<int, 2>> out;
    switch (shape) {
        case 0:  // small rectangle, 4x4
            for (int r = -2; r <= 1; ++r)
                for (int c = -2; c <= 1; ++c) out.push_back({r, c});
            break;
        case 1:  // large rectangle, 6x6
            for (int r = -3; r <= 2; ++r)
                for (int c = -3; c <= 2; ++c) out.push_back({r, c});
            break;
        case 2:  // small disc, radius 2
            for (int r = -2; r <= 2; ++r)
                for (int c = -2; c <= 2; ++c)
                    if (r * r + c * c <= 4) out.push_back({r, c});
            break;
        case 3:  // large disc, radius 3
            for (int r = -3; r <= 3; ++r)
                for (int c = -3; c <= 3; ++c)
                    if (r * r + c * c <= 9) out.push_back({r, c});
            break;
        case 4:  // small bar, 2x6
            for (int r = -1; r <= 0; ++r)
                for (int c = -3; c <= 2; ++c) out.push_back({r, c});
            break;
        case 5:  // large bar, 3x8
            for (int r = -1; r <= 1; ++r)
                for (int c = -4; c <= 3; ++c) out.push_back({r, c});
            break;
        default:
            throw DomainError("shape_offsets: id out of range");
    }
    return out;
}

bool same_scene_description(const SceneSpec& a, const SceneSpec& b) {
    return a.env == b.env && a.objects == b.objects && a.style == b.style;
}

void canonicalize(SceneSpec& scene) {
    std::sort(scene.objects.begin(), scene.objects.end(),
              [](const ObjectSpec& a, const ObjectSpec& b) {
                  return std::tie(a.pos, a.shape, a.color) < std::tie(b.pos, b.shape, b.color);
              });
}

bool scene_valid(const SceneSpec& scene) {
    if (scene.env < 0 || scene.env >= kNumEnvs) return false;
    if (scene.objects.size() > 2) return false;
    if (scene.style < -1 || scene.style >= kNumStyles) return false;
    for (const auto& o : scene.objects)
        if (o.color < 0 || o.color >= kNumColors || o.shape < 0 || o.shape >= kNumShapes ||
            o.pos < 0 || o.pos >= kNumAnchors)
            return false;
    return placed_valid(scene.env, place_all(scene));
}

void SceneSpace::validate() const {
    if (envs < 1 || envs > kNumEnvs || colors < 1 || colors > kNumColors || shapes < 1 ||
        shapes > kNumShapes || anchors < 1 || anchors > kNumAnchors)
        throw DomainError("SceneSpace: palette sizes out of range");
    if (object_counts.empty()) throw DomainError("SceneSpace: no object counts");
    for (int k : object_counts)
        if (k < 0 || k > 2) throw DomainError("SceneSpace: object count outside [0,2]");
}

std::vector<SceneSpec> build_scenes(std::size_t n, std::uint64_t seed, const SceneSpace& space,
                                    SamplingStats* stats) {
    space.validate();
    if (n < 1) throw DomainError("build_scenes: need at least one scene");
    std::vector<SceneSpec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, "scene", i);
        SceneSpec s = draw_scene(space, rng, stats);
        s.seed = derive_stream(seed, "scene", i);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::int64_t> prompt_tokens(const SceneSpec& scene) {
    std::vector<std::int64_t> out;
    out.push_back(kEnvTokenBase + scene.env);
    for (const auto& o : scene.objects) {
        out.push_back(kColorTokenBase + o.color);
        out.push_back(kShapeTokenBase + o.shape);
        out.push_back(kPosTokenBase + o.pos);
    }
    if (scene.style >= 0) out.push_back(kStyleTokenBase + scene.style);
    return out;
}

SceneSpec decode_prompt(const std::vector<std::int64_t>& tokens) {
    std::size_t i = 0;
    const auto end_of_content = [&] {
        for (std::size_t j = i; j < tokens.size(); ++j)
            if (tokens[j] != 0) return false;
        return true;
    };
    if (tokens.empty() || !in_range(tokens[0], kEnvTokenBase, kNumEnvs))
        throw DomainError("decode_prompt: missing environment token");
    SceneSpec s;
    s.env = static_cast<int>(tokens[0] - kEnvTokenBase);
    i = 1;
    while (i < tokens.size() && in_range(tokens[i], kColorTokenBase, kNumColors)) {
        if (i + 2 >= tokens.size() || !in_range(tokens[i + 1], kShapeTokenBase, kNumShapes) ||
            !in_range(tokens[i + 2], kPosTokenBase, kNumAnchors))
            throw DomainError("decode_prompt: malformed object triple");
        s.objects.push_back({static_cast<int>(tokens[i] - kColorTokenBase),
                             static_cast<int>(tokens[i + 1] - kShapeTokenBase),
                             static_cast<int>(tokens[i + 2] - kPosTokenBase)});
        i += 3;
    }
    if (s.objects.size() > 2) throw DomainError("decode_prompt: too many objects");
    if (i < tokens.size() && in_range(tokens[i], kStyleTokenBase, kNumStyles)) {
        s.style = static_cast<int>(tokens[i] - kStyleTokenBase);
        ++i;
    }
    if (!end_of_content()) throw DomainError("decode_prompt: trailing tokens outside grammar");
    return s;
}

Tensor<float> render(const SceneSpec& scene) {
    if (!scene_valid(scene)) throw DomainError("render: invalid scene");
    return render_placed(scene.env, place_all(scene), scene.style);
}

VideoClip render_video(const SceneSpec& scene, std::size_t frames) {
    if (!scene_valid(scene)) throw DomainError("render_video: invalid scene");
    if (frames < 1 || frames > 8) throw DomainError("render_video: frame count outside [1,8]");

    VideoClip clip;
    clip.caption = prompt_tokens(scene);
    clip.frames = Tensor<float>({frames, kImageChannels, kCanvas, kCanvas});

    std::vector<Placed> statics = place_all(scene);
    int mover_shape = 0, base_cy = 0, base_cx = 0;
    if (!scene.objects.empty()) {
        Rng mrng = make_rng(scene.seed, "motion");
        clip.mover = static_cast<int>(mrng.below(static_cast<std::uint32_t>(scene.objects.size())));
        const Placed m = statics[static_cast<std::size_t>(clip.mover)];
        mover_shape = m.shape;
        base_cy = m.cy;
        base_cx = m.cx;
        statics.erase(statics.begin() + clip.mover);

        // Center bounds that keep the footprint on the canvas.
        int rlo = 0, rhi = 0, clo = 0, chi = 0;
        for (const auto& d : shape_offsets(mover_shape)) {
            rlo = std::min(rlo, d[0]);
            rhi = std::max(rhi, d[0]);
            clo = std::min(clo, d[1]);
            chi = std::max(chi, d[1]);
        }
        const auto clamp_center = [&](int cy, int cx) {
            return std::array<int, 2>{std::clamp(cy, -rlo, kCanvas - 1 - rhi),
                                      std::clamp(cx, -clo, kCanvas - 1 - chi)};
        };

        // Nonzero velocities in a seeded order; first collision-free one wins.
        std::vector<std::array<int, 2>> candidates;
        for (int vy = -2; vy <= 2; ++vy)
            for (int vx = -2; vx <= 2; ++vx)
                if (vy != 0 || vx != 0) candidates.push_back({vy, vx});
        for (std::size_t i = candidates.size(); i > 1; --i)
            std::swap(candidates[i - 1], candidates[mrng.below(static_cast<std::uint32_t>(i))]);

        const auto collision_free = [&](int vy, int vx) {
            for (std::size_t f = 0; f < frames; ++f) {
                const auto c = clamp_center(base_cy + static_cast<int>(f) * vy,
                                            base_cx + static_cast<int>(f) * vx);
                const Placed at{0, mover_shape, c[0], c[1]};
                for (const auto& s : statics)
                    if (overlap(at, s)) return false;
            }
            return true;
        };
        for (const auto& v : candidates)
            if (collision_free(v[0], v[1])) {
                clip.vy = v[0];
                clip.vx = v[1];
                break;
            }

        for (std::size_t f = 0; f < frames; ++f) {
            std::vector<Placed> objs = statics;
            const auto c = clamp_center(base_cy + static_cast<int>(f) * clip.vy,
                                        base_cx + static_cast<int>(f) * clip.vx);
            objs.push_back({scene.objects[static_cast<std::size_t>(clip.mover)].color, mover_shape,
                            c[0], c[1]});
            const Tensor<float> frame = render_placed(scene.env, objs, scene.style);
            std::copy(frame.data.begin(), frame.data.end(),
                      clip.frames.data.begin() +
                          static_cast<std::ptrdiff_t>(f * frame.data.size()));
        }
    } else {
        const Tensor<float> frame = render_placed(scene.env, {}, scene.style);
        for (std::size_t f = 0; f < frames; ++f)
            std::copy(frame.data.begin(), frame.data.end(),
                      clip.frames.data.begin() +
                          static_cast<std::ptrdiff_t>(f * frame.data.size()));
    }
    return clip;
}

std::string to_string(EditKind kind) {
    switch (kind) {
        case EditKind::Recolor: return "recolor";
        case EditKind::AddObject: return "add-object";
        case EditKind::RemoveObject: return "remove-object";
        case EditKind::BackgroundSwap: return "background-swap";
        case EditKind::GlobalStyle: return "global-style";
    }
    throw DomainError("to_string: unknown edit kind");
}

EditKind parse_edit_kind(const std::string& name) {
    if (name == "recolor") return EditKind::Recolor;
    if (name == "add-object") return EditKind::AddObject;
    if (name == "remove-object") return EditKind::RemoveObject;
    if (name == "background-swap") return EditKind::BackgroundSwap;
    if (name == "global-style") return EditKind::GlobalStyle;
    throw DomainError("parse_edit_kind: unknown edit kind '" + name + "'");
}

bool edit_is_local(EditKind kind) {
    return kind == EditKind::Recolor || kind == EditKind::AddObject ||
           kind == EditKind::RemoveObject;
}

SceneSpec apply_task(const SceneSpec& scene, const EditTask& task) {
    SceneSpec out = scene;
    const int k = static_cast<int>(scene.objects.size());
    switch (task.kind) {
        case EditKind::Recolor: {
            if (task.object_index < 0 || task.object_index >= k)
                throw InapplicableTask("recolor: no such object");
            if (task.new_color < 0 || task.new_color >= kNumColors)
                throw InapplicableTask("recolor: color out of range");
            auto& obj = out.objects[static_cast<std::size_t>(task.object_index)];
            if (obj.color == task.new_color)
                throw InapplicableTask("recolor: color unchanged");
            obj.color = task.new_color;
            break;
        }
        case EditKind::AddObject: {
            if (k != 1)
                throw InapplicableTask("add-object: needs exactly one existing object "
                                       "(prompt budget allows two)");
            out.objects.push_back(task.new_object);
            break;
        }
        case EditKind::RemoveObject: {
            if (task.object_index < 0 || task.object_index >= k)
                throw InapplicableTask("remove-object: no such object");
            out.objects.erase(out.objects.begin() + task.object_index);
            break;
        }
        case EditKind::BackgroundSwap: {
            if (task.new_env < 0 || task.new_env >= kNumEnvs)
                throw InapplicableTask("background-swap: environment out of range");
            if (task.new_env == scene.env)
                throw InapplicableTask("background-swap: environment unchanged");
            out.env = task.new_env;
            break;
        }
        case EditKind::GlobalStyle: {
            if (scene.style >= 0) throw InapplicableTask("global-style: scene already styled");
            if (task.style < 0 || task.style >= kNumStyles)
                throw InapplicableTask("global-style: style out of range");
            out.style = task.style;
            break;
        }
    }
    canonicalize(out);
    if (!scene_valid(out)) throw InapplicableTask(to_string(task.kind) + ": edited scene invalid");
    return out;
}

EditTask sample_task(const SceneSpec& scene, Rng& rng) {
    if (scene.objects.empty() || scene.style >= 0)
        throw InapplicableTask("sample_task: expects an unstyled scene with objects");
    const int k = static_cast<int>(scene.objects.size());

    std::vector<EditKind> kinds = {EditKind::Recolor, EditKind::RemoveObject,
                                   EditKind::BackgroundSwap, EditKind::GlobalStyle};
    if (k == 1) kinds.insert(kinds.begin() + 1, EditKind::AddObject);

    EditTask task;
    task.kind = kinds[rng.below(static_cast<std::uint32_t>(kinds.size()))];
    switch (task.kind) {
        case EditKind::Recolor: {
            task.object_index = static_cast<int>(rng.below(static_cast<std::uint32_t>(k)));
            const int old = scene.objects[static_cast<std::size_t>(task.object_index)].color;
            do {
                task.new_color = static_cast<int>(rng.below(kNumColors));
            } while (task.new_color == old);
            break;
        }
        case EditKind::AddObject: {
            for (std::size_t i = 0; i < kMaxArgAttempts; ++i) {
                task.new_object = draw_object({}, rng);
                SceneSpec probe = scene;
                probe.objects.push_back(task.new_object);
                if (scene_valid(probe)) return task;
            }
            throw ExhaustedSampling("sample_task: no addable object in " +
                                    std::to_string(kMaxArgAttempts) + " proposals");
        }
        case EditKind::RemoveObject:
            task.object_index = static_cast<int>(rng.below(static_cast<std::uint32_t>(k)));
            break;
        case EditKind::BackgroundSwap:
            do {
                task.new_env = static_cast<int>(rng.below(kNumEnvs));
            } while (task.new_env == scene.env);
            break;
        case EditKind::GlobalStyle:
            task.style = static_cast<int>(rng.below(kNumStyles));
            break;
    }
    return task;
}

EditPairSample synth_pair(const SceneSpec& scene, const EditTask& task) {
    EditPairSample s;
    s.scene = scene;
    s.task = task;
    s.src_image = render(scene);
    const SceneSpec edited = apply_task(scene, task);
    s.edit_image = render(edited);
    s.src_prompt = prompt_tokens(scene);
    s.edit_prompt = prompt_tokens(edited);
    s.edit_mask = Tensor<float>({1, kCanvas, kCanvas});
    for (int i = 0; i < kCanvas * kCanvas; ++i) {
        bool diff = false;
        for (int ch = 0; ch < kImageChannels; ++ch)
            diff = diff || s.src_image.data[static_cast<std::size_t>(ch * kCanvas * kCanvas + i)] !=
                               s.edit_image.data[static_cast<std::size_t>(ch * kCanvas * kCanvas + i)];
        s.edit_mask.data[static_cast<std::size_t>(i)] = diff ? 1.0f : 0.0f;
    }
    return s;
}

FilterReport filter_pairs(const std::vector<EditPairSample>& samples) {
    FilterReport report;
    for (std::size_t idx = 0; idx < samples.size(); ++idx) {
        const auto& s = samples[idx];
        bool clean_outside = true;
        std::size_t masked = 0;
        for (int i = 0; i < kCanvas * kCanvas; ++i) {
            const bool inside = s.edit_mask.data[static_cast<std::size_t>(i)] != 0.0f;
            if (inside) ++masked;
            if (!inside)
                for (int ch = 0; ch < kImageChannels; ++ch)
                    clean_outside =
                        clean_outside &&
                        s.src_image.data[static_cast<std::size_t>(ch * kCanvas * kCanvas + i)] ==
                            s.edit_image.data[static_cast<std::size_t>(ch * kCanvas * kCanvas + i)];
        }
        const double coverage =
            static_cast<double>(masked) / static_cast<double>(kCanvas * kCanvas);
        if (!clean_outside) {
            report.rejected.push_back({idx, "non-edit-region mismatch"});
        } else if (edit_is_local(s.task.kind) && masked == 0) {
            report.rejected.push_back({idx, "empty mask"});
        } else if (edit_is_local(s.task.kind) && (coverage < 0.01 || coverage > 0.90)) {
            report.rejected.push_back({idx, "mask coverage out of range"});
        } else {
            report.accepted.push_back(s);
        }
    }
    return report;
}

std::vector<EditPairSample> make_edit_dataset(std::size_t n, std::uint64_t seed,
                                              const SceneSpace& space) {
    space.validate();
    std::vector<EditPairSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, "pair", i);
        SceneSpec scene = draw_scene(space, rng, nullptr);
        scene.seed = derive_stream(seed, "pair", i);
        out.push_back(synth_pair(scene, sample_task(scene, rng)));
    }
    return out;
}

std::vector<VideoClip> make_video_dataset(std::size_t n, std::size_t frames, std::uint64_t seed,
                                          const SceneSpace& space) {
    space.validate();
    std::vector<VideoClip> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_rng(seed, "clip", i);
        SceneSpec scene = draw_scene(space, rng, nullptr);
        scene.seed = derive_stream(seed, "clip", i);
        out.push_back(render_video(scene, frames));
    }
    return out;
}

}  // namespace ive
