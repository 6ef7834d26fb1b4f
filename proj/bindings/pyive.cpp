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

// Python bindings for the main operations: dataset synthesis, the two
// training phases, sampling, metrics, and the gradient-check suite.
// Images cross the boundary as float32 numpy arrays; checkpoints stay on
// disk and are referenced by path.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "ive/checkpoint.hpp"
#include "ive/errors.hpp"
#include "ive/evaluate.hpp"
#include "ive/flow.hpp"
#include "ive/gradcheck.hpp"
#include "ive/rng.hpp"
#include "ive/synth.hpp"
#include "ive/trainer.hpp"

namespace py = pybind11;
using namespace ive;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from(const FloatArray& arr) {
    Shape sh(static_cast<std::size_t>(arr.ndim()));
    for (py::ssize_t d = 0; d < arr.ndim(); ++d) sh[d] = static_cast<std::size_t>(arr.shape(d));
    Tensor<float> t(sh);
    std::memcpy(t.data.data(), arr.data(), t.size() * sizeof(float));
    return t;
}

py::array_t<float> array_from(const Tensor<float>& t) {
    std::vector<py::ssize_t> sh(t.shape.begin(), t.shape.end());
    py::array_t<float> out(sh);
    std::memcpy(out.mutable_data(), t.data.data(), t.size() * sizeof(float));
    return out;
}

py::array_t<double> array_from(const std::vector<double>& v) {
    py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
    return out;
}

/// [index, ...frame shape] slice of a stacked array as one tensor.
Tensor<float> row_of(const Tensor<float>& stacked, std::size_t i) {
    Shape sh(stacked.shape.begin() + 1, stacked.shape.end());
    Tensor<float> out(sh);
    std::copy(stacked.data.begin() + i * out.size(), stacked.data.begin() + (i + 1) * out.size(),
              out.data.begin());
    return out;
}

std::vector<EditPairSample> pairs_from(const FloatArray& src, const FloatArray& edit,
                                       const std::vector<std::vector<std::int64_t>>& src_prompts,
                                       const std::vector<std::vector<std::int64_t>>& edit_prompts,
                                       const FloatArray* masks) {
    const Tensor<float> s = tensor_from(src), e = tensor_from(edit);
    if (s.rank() != 4 || e.shape != s.shape)
        throw ShapeMismatch("want matching [N,C,H,W] source and edit stacks, got " +
                            shape_str(s.shape) + " and " + shape_str(e.shape));
    const std::size_t n = s.shape[0];
    if (src_prompts.size() != n || edit_prompts.size() != n)
        throw DomainError("prompt lists must match the pair count " + std::to_string(n));
    Tensor<float> m;
    if (masks) {
        m = tensor_from(*masks);
        if (m.rank() != 4 || m.shape[0] != n || m.shape[1] != 1 || m.shape[2] != s.shape[2] ||
            m.shape[3] != s.shape[3])
            throw ShapeMismatch("want masks [N,1,H,W] matching the images, got " +
                                shape_str(m.shape));
    }
    std::vector<EditPairSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].src_image = row_of(s, i);
        out[i].edit_image = row_of(e, i);
        out[i].src_prompt = src_prompts[i];
        out[i].edit_prompt = edit_prompts[i];
        out[i].edit_mask =
            masks ? row_of(m, i) : Tensor<float>::ones({1, s.shape[2], s.shape[3]});
    }
    return out;
}

std::vector<VideoClip> clips_from(const FloatArray& clips,
                                  const std::vector<std::vector<std::int64_t>>& captions) {
    const Tensor<float> c = tensor_from(clips);
    if (c.rank() != 5)
        throw ShapeMismatch("want stacked clips [N,F,C,H,W], got " + shape_str(c.shape));
    if (captions.size() != c.shape[0])
        throw DomainError("caption list must match the clip count " + std::to_string(c.shape[0]));
    std::vector<VideoClip> out(c.shape[0]);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].frames = row_of(c, i);
        out[i].caption = captions[i];
    }
    return out;
}

py::dict report_dict(const TrainResult& result) {
    py::dict d;
    d["losses"] = array_from(result.report.losses);
    d["initial_window"] = result.report.initial_window;
    d["final_window"] = result.report.final_window;
    d["heldout_initial"] = result.report.heldout_initial;
    d["heldout_final"] = result.report.heldout_final;
    d["step"] = result.checkpoint.step;
    d["checkpoint_digest"] = checkpoint_digest(result.checkpoint);
    d["config_digest"] = config_digest(result.checkpoint.config);
    return d;
}

TrainConfig config_with_phase(const std::string& cfg_json, TrainPhase phase,
                              const std::string& ckpt_out) {
    TrainConfig cfg = train_config_from_json(cfg_json);
    cfg.phase = phase;
    cfg.checkpoint_path = ckpt_out;
    if (!(cfg.learning_rate > 0.0))
        throw DomainError("training needs a positive learning rate");
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(pyive, m) {
    m.doc() =
        "Flow-matching image/video edit model: procedural data, two-phase training,\n"
        "sampling, and exact pixel metrics. Images are float32 numpy arrays in [C,H,W]\n"
        "layout ([F,C,H,W] for videos, leading N for stacks); checkpoints live on disk.";

    m.def(
        "make_edit_dataset",
        [](std::size_t n, std::uint64_t seed) {
            const auto pairs = make_edit_dataset(n, seed);
            const std::size_t count = pairs.size();
            Tensor<float> src({count, 3, kCanvas, kCanvas});
            Tensor<float> edit({count, 3, kCanvas, kCanvas});
            Tensor<float> mask({count, 1, kCanvas, kCanvas});
            std::vector<std::vector<std::int64_t>> sp(count), ep(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::copy(pairs[i].src_image.data.begin(), pairs[i].src_image.data.end(),
                          src.data.begin() + i * pairs[i].src_image.size());
                std::copy(pairs[i].edit_image.data.begin(), pairs[i].edit_image.data.end(),
                          edit.data.begin() + i * pairs[i].edit_image.size());
                std::copy(pairs[i].edit_mask.data.begin(), pairs[i].edit_mask.data.end(),
                          mask.data.begin() + i * pairs[i].edit_mask.size());
                sp[i] = pairs[i].src_prompt;
                ep[i] = pairs[i].edit_prompt;
            }
            py::dict d;
            d["src"] = array_from(src);
            d["edit"] = array_from(edit);
            d["mask"] = array_from(mask);
            d["src_prompts"] = sp;
            d["edit_prompts"] = ep;
            return d;
        },
        py::arg("n"), py::arg("seed"),
        "Procedurally generated edit pairs with exact difference masks.");

    m.def(
        "make_video_dataset",
        [](std::size_t n, std::size_t frames, std::uint64_t seed) {
            const auto clips = make_video_dataset(n, frames, seed);
            const std::size_t count = clips.size();
            Tensor<float> stack({count, frames, 3, kCanvas, kCanvas});
            std::vector<std::vector<std::int64_t>> captions(count);
            for (std::size_t i = 0; i < count; ++i) {
                std::copy(clips[i].frames.data.begin(), clips[i].frames.data.end(),
                          stack.data.begin() + i * clips[i].frames.size());
                captions[i] = clips[i].caption;
            }
            py::dict d;
            d["clips"] = array_from(stack);
            d["captions"] = captions;
            return d;
        },
        py::arg("n"), py::arg("frames"), py::arg("seed"),
        "Procedurally generated caption+motion video clips.");

    m.def(
        "interpolate",
        [](const FloatArray& x0, const FloatArray& x1, double t) {
            const FlowSample<float> s = interpolate(tensor_from(x0), tensor_from(x1), t);
            return py::make_tuple(array_from(s.xt), array_from(s.u));
        },
        py::arg("x0"), py::arg("x1"), py::arg("t"),
        "Straight-line interpolant and its constant target velocity.");

    m.def(
        "masked_mse",
        [](const FloatArray& a, const FloatArray& b, const FloatArray& mask, bool inside) {
            return masked_mse(tensor_from(a), tensor_from(b), tensor_from(mask), inside);
        },
        py::arg("a"), py::arg("b"), py::arg("mask"), py::arg("inside") = true,
        "MSE restricted to one side of a [1,H,W] mask.");

    m.def("psnr_db", &psnr_db, py::arg("mse"), "10*log10(1/mse) for unit-range images.");

    m.def(
        "adjacent_frame_mse",
        [](const FloatArray& video) { return adjacent_frame_mse(tensor_from(video)); },
        py::arg("video"), "Mean squared difference between adjacent frames of [F,C,H,W].");

    m.def(
        "default_config",
        [](const std::string& phase) {
            TrainConfig cfg;
            cfg.phase = parse_phase(phase);
            return train_config_to_json(cfg);
        },
        py::arg("phase") = "edit",
        "Default training config as JSON; edit fields and pass back to the trainers.");

    m.def(
        "pretrain",
        [](const std::string& config_json, const FloatArray& clips,
           const std::vector<std::vector<std::int64_t>>& captions,
           const std::string& checkpoint_out) {
            const TrainConfig cfg =
                config_with_phase(config_json, TrainPhase::Pretrain, checkpoint_out);
            return report_dict(pretrain_backbone(cfg, clips_from(clips, captions)));
        },
        py::arg("config_json"), py::arg("clips"), py::arg("captions"),
        py::arg("checkpoint_out") = "",
        "Phase 1: train the frozen-to-be backbone on video clips [N,F,C,H,W].");

    m.def(
        "train_edit",
        [](const std::string& config_json, const FloatArray& src, const FloatArray& edit,
           const std::vector<std::vector<std::int64_t>>& src_prompts,
           const std::vector<std::vector<std::int64_t>>& edit_prompts,
           const std::string& backbone_path, const std::string& checkpoint_out) {
            const TrainConfig base =
                config_with_phase(config_json, TrainPhase::EditTrain, checkpoint_out);
            const Checkpoint bb = load_checkpoint(backbone_path);
            TrainConfig cfg = base;
            cfg.model = bb.config.model;
            const Checkpoint start = attach_and_inherit(bb, cfg.seed);
            return report_dict(
                train_edit(cfg, pairs_from(src, edit, src_prompts, edit_prompts, nullptr), start));
        },
        py::arg("config_json"), py::arg("src"), py::arg("edit"), py::arg("src_prompts"),
        py::arg("edit_prompts"), py::arg("backbone_path"), py::arg("checkpoint_out") = "",
        "Phase 2: attach adapters to a phase-1 checkpoint and train them on image pairs.");

    m.def(
        "edit_sample",
        [](const std::string& checkpoint_path, const FloatArray& source,
           const std::vector<std::int64_t>& src_prompt,
           const std::vector<std::int64_t>& edit_prompt, std::uint64_t seed, std::size_t steps,
           const std::string& mode) {
            const Checkpoint ckpt = load_checkpoint(checkpoint_path);
            Tensor<float> src = tensor_from(source);
            const bool single = src.rank() == 3;
            if (single) {
                Shape sh = src.shape;
                sh.insert(sh.begin(), 1);
                src = Tensor<float>(sh, src.data);
            }
            const AblationMode m_ = mode.empty() ? ckpt.config.ablation : parse_mode(mode);
            SamplerConfig scfg;
            scfg.steps = steps;
            scfg.validate();
            Rng rng = make_rng(seed, "py_sample");
            Tensor<float> out = edit_sample(ckpt.config.model, ckpt.params, m_, src, src_prompt,
                                            edit_prompt, scfg, rng);
            if (single) out = Tensor<float>(Shape(out.shape.begin() + 1, out.shape.end()),
                                            std::move(out.data));
            return array_from(out);
        },
        py::arg("checkpoint_path"), py::arg("source"), py::arg("src_prompt"),
        py::arg("edit_prompt"), py::arg("seed") = 0, py::arg("steps") = 32, py::arg("mode") = "",
        "Apply a prompted edit to a [C,H,W] image or static [F,C,H,W] video.");

    m.def(
        "evaluate",
        [](const std::string& checkpoint_path, const FloatArray& src, const FloatArray& edit,
           const FloatArray& masks, const std::vector<std::vector<std::int64_t>>& src_prompts,
           const std::vector<std::vector<std::int64_t>>& edit_prompts, std::uint64_t seed,
           std::size_t steps, const std::string& mode) {
            const Checkpoint ckpt = load_checkpoint(checkpoint_path);
            const auto pairs = pairs_from(src, edit, src_prompts, edit_prompts, &masks);
            const AblationMode m_ = mode.empty() ? ckpt.config.ablation : parse_mode(mode);
            SamplerConfig scfg;
            scfg.steps = steps;
            scfg.validate();
            const EditEval ev =
                eval_edit_pairs(ckpt.config.model, ckpt.params, m_, pairs, seed, scfg);
            self_audit(ev, pairs, seed);
            py::dict d;
            d["edit_mse"] = array_from(ev.edit_mse);
            d["preserve_mse"] = array_from(ev.preserve_mse);
            d["preserve_defined"] =
                std::vector<bool>(ev.preserve_defined.begin(), ev.preserve_defined.end());
            d["preserve_exact"] =
                std::vector<bool>(ev.preserve_exact.begin(), ev.preserve_exact.end());
            d["mean_edit_mse"] = ev.mean_edit_mse;
            d["mean_preserve_psnr_db"] = ev.mean_preserve_psnr_db;
            d["preserve_exact_count"] = ev.preserve_exact_count;
            d["psnr_pair_count"] = ev.psnr_pair_count;
            return d;
        },
        py::arg("checkpoint_path"), py::arg("src"), py::arg("edit"), py::arg("masks"),
        py::arg("src_prompts"), py::arg("edit_prompts"), py::arg("seed") = 0,
        py::arg("steps") = 32, py::arg("mode") = "",
        "Edit fidelity and preservation metrics with the built-in self audit.");

    m.def(
        "temporal_consistency",
        [](const std::string& checkpoint_path, const FloatArray& src,
           const std::vector<std::vector<std::int64_t>>& src_prompts,
           const std::vector<std::vector<std::int64_t>>& edit_prompts, std::size_t frames,
           std::uint64_t seed, std::size_t steps, const std::string& mode) {
            const Checkpoint ckpt = load_checkpoint(checkpoint_path);
            auto pairs = pairs_from(src, src, src_prompts, edit_prompts, nullptr);
            const AblationMode m_ = mode.empty() ? ckpt.config.ablation : parse_mode(mode);
            SamplerConfig scfg;
            scfg.steps = steps;
            scfg.validate();
            const TemporalEval ev = eval_temporal_consistency(ckpt.config.model, ckpt.params, m_,
                                                              pairs, frames, seed, scfg);
            py::dict d;
            d["frames"] = ev.frames;
            d["adjacent_mse"] = array_from(ev.adjacent_mse);
            d["mean_adjacent_mse"] = ev.mean_adjacent_mse;
            return d;
        },
        py::arg("checkpoint_path"), py::arg("src"), py::arg("src_prompts"),
        py::arg("edit_prompts"), py::arg("frames"), py::arg("seed") = 0, py::arg("steps") = 32,
        py::arg("mode") = "",
        "Adjacent-frame MSE of edits applied to static sources replicated over F frames.");

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            py::list rows;
            for (const GradCheckEntry& e : run_gradcheck_suite(seed)) {
                py::dict d;
                d["name"] = e.name;
                d["rel_err"] = e.rel_err;
                d["tolerance"] = e.tolerance;
                d["pass"] = e.pass;
                rows.append(d);
            }
            return rows;
        },
        py::arg("seed") = 7, "Finite-difference audit of every differentiable operation.");

    m.def(
        "checkpoint_info",
        [](const std::string& path) {
            const Checkpoint ckpt = load_checkpoint(path);
            py::dict d;
            d["step"] = ckpt.step;
            d["digest"] = checkpoint_digest(ckpt);
            d["config_json"] = train_config_to_json(ckpt.config);
            d["params"] = ckpt.params.tensors.size();
            return d;
        },
        py::arg("path"), "Step counter, digest, and config of a stored checkpoint.");
}
