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

#include "ive/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "ive/errors.hpp"

namespace ive {

namespace {

double window_mean(const std::vector<double>& xs, bool front) {
    if (xs.empty()) return 0.0;
    const std::size_t w = std::min(kLossWindow, xs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < w; ++i) acc += front ? xs[i] : xs[xs.size() - w + i];
    return acc / static_cast<double>(w);
}

void finish_report(TrainReport& r) {
    r.initial_window = window_mean(r.losses, true);
    r.final_window = window_mean(r.losses, false);
}

/// Collects d(loss)/d(param) for the given names off a swept tape.
std::map<std::string, Tensor<float>> collect_grads(const Tape<float>& tape,
                                                   const BoundParams<float>& bound,
                                                   const std::vector<std::string>& names) {
    std::map<std::string, Tensor<float>> grads;
    for (const auto& n : names) grads.emplace(n, tape.grad(bound.at(n)));
    return grads;
}

void save_if_named(const TrainConfig& cfg, const Checkpoint& ckpt) {
    if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, ckpt);
}

Tensor<float> normal_like(const Shape& sh, Rng& rng) {
    Tensor<float> t(sh);
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::uint64_t epoch) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(seed, "shuffle", epoch);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = rng.below(static_cast<std::uint32_t>(i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace

double heldout_fm_loss(const DiTConfig& cfg, const ParamStore<float>& params,
                       const std::vector<VideoClip>& clips, std::uint64_t seed) {
    if (clips.empty()) throw DomainError("held-out evaluation needs at least one clip");
    const std::size_t C = cfg.channels, H = cfg.image_size, W = cfg.image_size;
    double acc = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const VideoClip& clip = clips[i];
        const std::size_t F = clip.frames.shape.at(0);
        Tensor<float> x1({1, F, C, H, W});
        x1.data = clip.frames.data;
        Rng rng = make_rng(seed, "heldout", i);
        const double tval = rng.u01();
        const Tensor<float> x0 = normal_like(x1.shape, rng);
        const FlowSample<float> fs = interpolate(x0, x1, tval);

        Tape<float> tape;
        const BoundParams<float> bound = bind_params(tape, params, false);
        const auto vid = tape.input(fs.xt);
        const auto fwd = backbone_forward(tape, cfg, bound, vid, {tval}, {clip.caption});
        const auto loss = fm_loss(tape, fwd.velocity, fs.u);
        acc += static_cast<double>(tape.val(loss).data[0]);
    }
    return acc / static_cast<double>(clips.size());
}

TrainResult pretrain_backbone(const TrainConfig& cfg, const std::vector<VideoClip>& clips) {
    cfg.validate();
    if (cfg.phase != TrainPhase::Pretrain)
        throw DomainError("pretrain_backbone needs a pretraining config");
    if (clips.size() < 2) throw DomainError("pretraining needs at least two clips");
    const std::size_t C = cfg.model.channels, H = cfg.model.image_size, W = cfg.model.image_size;
    const std::size_t corpus_frames = clips[0].frames.shape.at(0);
    for (const auto& c : clips)
        if (c.frames.shape != Shape{corpus_frames, C, H, W})
            throw ShapeMismatch("pretraining corpus clips must share one geometry");
    if (corpus_frames > cfg.model.frames_max)
        throw DomainError("corpus clips are longer than the model supports");

    // Last tenth (capped) is never trained on; it anchors the learning-signal
    // measurement.
    const std::size_t n_held =
        std::min<std::size_t>(64, std::max<std::size_t>(1, clips.size() / 10));
    const std::size_t n_train = clips.size() - n_held;
    const std::vector<VideoClip> held(clips.begin() + static_cast<std::ptrdiff_t>(n_train),
                                      clips.end());

    TrainResult out;
    out.checkpoint.config = cfg;
    out.checkpoint.params = init_backbone(cfg.model, cfg.seed);
    ParamStore<float>& params = out.checkpoint.params;
    AdamState& opt = out.checkpoint.opt;
    const std::vector<std::string> reg = params.trainable_names();

    out.report.heldout_initial = heldout_fm_loss(cfg.model, params, held, cfg.seed);

    const std::size_t schedule_len = sizeof(kFrameSchedule) / sizeof(kFrameSchedule[0]);
    for (std::uint64_t step = out.checkpoint.step; step < cfg.steps; ++step) {
        const std::size_t F = std::min(kFrameSchedule[step % schedule_len], corpus_frames);
        const std::size_t rows = pretrain_rows(cfg.batch_size, F);
        const std::size_t row_elems = F * C * H * W;

        Rng pick = make_rng(cfg.seed, "batch", step);
        Rng noise = make_rng(cfg.seed, "noise", step);
        Tensor<float> xt({rows, F, C, H, W});
        Tensor<float> u({rows, F, C, H, W});
        std::vector<double> times(rows);
        std::vector<std::vector<std::int64_t>> prompts(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const VideoClip& clip = clips[pick.below(static_cast<std::uint32_t>(n_train))];
            Tensor<float> x1({F, C, H, W});
            std::memcpy(x1.data.data(), clip.frames.data.data(), row_elems * sizeof(float));
            const double tval = noise.u01();
            const Tensor<float> x0 = normal_like(x1.shape, noise);
            const FlowSample<float> fs = interpolate(x0, x1, tval);
            std::memcpy(xt.data.data() + r * row_elems, fs.xt.data.data(),
                        row_elems * sizeof(float));
            std::memcpy(u.data.data() + r * row_elems, fs.u.data.data(),
                        row_elems * sizeof(float));
            times[r] = tval;
            prompts[r] = clip.caption;
        }

        Tape<float> tape;
        const BoundParams<float> bound = bind_params(tape, params, true);
        const auto vid = tape.input(xt);
        const auto fwd = backbone_forward(tape, cfg.model, bound, vid, times, prompts);
        const auto loss = fm_loss(tape, fwd.velocity, u);
        const double lval = static_cast<double>(tape.val(loss).data[0]);
        if (!std::isfinite(lval)) {
            out.checkpoint.step = step;  // params/opt still hold the pre-step state
            save_if_named(cfg, out.checkpoint);
            throw NonFiniteLoss("pretraining step " + std::to_string(step));
        }
        tape.backward(loss);
        adam_step(params, collect_grads(tape, bound, reg), opt, cfg.learning_rate, cfg.beta1,
                  cfg.beta2, cfg.adam_eps);
        out.report.losses.push_back(lval);
    }
    out.checkpoint.step = cfg.steps;
    out.report.heldout_final = heldout_fm_loss(cfg.model, params, held, cfg.seed);
    finish_report(out.report);
    save_if_named(cfg, out.checkpoint);
    return out;
}

Checkpoint attach_and_inherit(const Checkpoint& backbone, std::uint64_t seed) {
    Checkpoint out;
    out.config = backbone.config;
    out.params = backbone.params;
    attach_pu_params(out.params, backbone.config.model, seed);
    return out;
}

void verify_frozen(const ParamStore<float>& params,
                   const std::map<std::string, std::string>& expected) {
    for (const auto& [name, digest] : expected) {
        if (!params.has(name)) throw FrozenParamDrift("tensor vanished: " + name);
        if (!params.is_frozen(name)) throw FrozenParamDrift("tensor thawed: " + name);
        if (tensor_digest(params.at(name)) != digest)
            throw FrozenParamDrift("tensor changed: " + name);
    }
}

TrainResult train_edit(const TrainConfig& cfg, const std::vector<EditPairSample>& pairs,
                       const Checkpoint& start) {
    cfg.validate();
    if (cfg.phase != TrainPhase::EditTrain) throw DomainError("train_edit needs an edit config");
    if (pairs.size() < cfg.batch_size) throw DomainError("batch size exceeds the pair corpus");
    if (!start.params.has("pu.block0.zlin1.w"))
        throw IncompatibleShapes("attach the adapters before phase-2 training");
    if (!(start.config.model == cfg.model))
        throw IncompatibleShapes("checkpoint model geometry disagrees with the config");

    const std::size_t spe = pairs.size() / cfg.batch_size;  // steps per epoch
    const std::uint64_t total = static_cast<std::uint64_t>(spe) * cfg.epochs;
    if (start.step > total) throw DomainError("checkpoint is already past the configured run");

    TrainResult out;
    out.checkpoint = start;
    out.checkpoint.config = cfg;
    ParamStore<float>& params = out.checkpoint.params;
    AdamState& opt = out.checkpoint.opt;

    const std::map<std::string, std::string> frozen0 = frozen_digests(params);
    if (frozen0.empty()) throw DomainError("phase 2 expects a frozen backbone");

    // The optimizer registry: adapter parameters the ablation mode admits.
    std::vector<std::string> reg;
    for (const auto& n : params.trainable_names())
        if (pu_param_in_mode(n, cfg.ablation)) reg.push_back(n);
    if (reg.empty()) throw DomainError("no trainable parameters under this mode");

    const std::size_t B = cfg.batch_size;
    const std::size_t C = cfg.model.channels, H = cfg.model.image_size, W = cfg.model.image_size;
    const std::size_t row_elems = C * H * W;
    for (const auto& p : pairs)
        if (p.src_image.shape != Shape{C, H, W} || p.edit_image.shape != Shape{C, H, W})
            throw ShapeMismatch("pair images disagree with the model geometry");

    for (std::uint64_t step = start.step; step < total; ++step) {
        const std::uint64_t epoch = step / spe;
        const std::size_t slot = static_cast<std::size_t>(step % spe);
        const std::vector<std::size_t> perm = epoch_permutation(pairs.size(), cfg.seed, epoch);

        Rng noise = make_rng(cfg.seed, "noise", step);
        Tensor<float> stacked({2 * B, 1, C, H, W});
        Tensor<float> u_full({2 * B, 1, C, H, W});  // source rows stay zero (masked out)
        std::vector<double> times(2 * B);
        std::vector<std::vector<std::int64_t>> prompts(2 * B);
        for (std::size_t i = 0; i < B; ++i) {
            const EditPairSample& p = pairs[perm[slot * B + i]];
            std::memcpy(stacked.data.data() + i * row_elems, p.src_image.data.data(),
                        row_elems * sizeof(float));
            times[i] = 1.0;  // the source stream rides along clean
            prompts[i] = p.src_prompt;

            const double tval = noise.u01();
            const Tensor<float> x0 = normal_like(p.edit_image.shape, noise);
            const FlowSample<float> fs = interpolate(x0, p.edit_image, tval);
            std::memcpy(stacked.data.data() + (B + i) * row_elems, fs.xt.data.data(),
                        row_elems * sizeof(float));
            std::memcpy(u_full.data.data() + (B + i) * row_elems, fs.u.data.data(),
                        row_elems * sizeof(float));
            times[B + i] = tval;
            prompts[B + i] = p.edit_prompt;
        }
        const Tensor<float> mask = target_stream_mask<float>(stacked.shape);

        Tape<float> tape;
        const BoundParams<float> bound = bind_params(tape, params, true);
        const auto sid = tape.input(stacked);
        const EditForward<float> ef =
            edit_forward(tape, cfg.model, bound, sid, times, prompts, cfg.ablation);
        const auto loss = fm_loss_masked(tape, ef.fwd.velocity, u_full, mask);
        const double lval = static_cast<double>(tape.val(loss).data[0]);
        if (!std::isfinite(lval)) {
            out.checkpoint.step = step;
            save_if_named(cfg, out.checkpoint);
            throw NonFiniteLoss("edit step " + std::to_string(step));
        }
        tape.backward(loss);
        adam_step(params, collect_grads(tape, bound, reg), opt, cfg.learning_rate, cfg.beta1,
                  cfg.beta2, cfg.adam_eps);
        out.report.losses.push_back(lval);
        if ((step + 1) % cfg.log_every == 0) verify_frozen(params, frozen0);
    }
    verify_frozen(params, frozen0);
    out.checkpoint.step = total;
    finish_report(out.report);
    save_if_named(cfg, out.checkpoint);
    return out;
}

std::vector<AblationRun> run_ablation(const TrainConfig& cfg,
                                      const std::vector<EditPairSample>& pairs,
                                      const Checkpoint& backbone) {
    std::vector<AblationRun> out;
    for (const AblationMode mode : {AblationMode::Full, AblationMode::NoTextGate,
                                    AblationMode::NoUpdate, AblationMode::NaiveParallel2D}) {
        TrainConfig c = cfg;
        c.ablation = mode;
        c.checkpoint_path.clear();  // comparative runs stay in memory
        const Checkpoint attached = attach_and_inherit(backbone, cfg.seed);
        out.push_back({mode, train_edit(c, pairs, attached)});
    }
    return out;
}

}  // namespace ive
