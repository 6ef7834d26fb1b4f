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

// Command-line front end: dataset generation, the two training phases,
// sampling, evaluation, gradient checking, and the ablation sweep. Every
// run writes report.json (timestamp isolated in one field) plus run.log
// under --out. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ive/checkpoint.hpp"
#include "ive/dataset_io.hpp"
#include "ive/errors.hpp"
#include "ive/evaluate.hpp"
#include "ive/gradcheck.hpp"
#include "ive/rng.hpp"
#include "ive/trainer.hpp"

namespace fs = std::filesystem;
using namespace ive;

namespace {

std::string iso_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string join_command(int argc, char** argv) {
    std::string out = fs::path(argv[0]).filename().string();
    for (int i = 1; i < argc; ++i) out += std::string(" ") + argv[i];
    return out;
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DomainError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    return sha256_hex(bytes.data(), bytes.size());
}

std::string dataset_digest_of(const fs::path& dir) {
    return file_digest(dir / "manifest.json");
}

/// Missing input files are user errors (exit 1), not runtime failures.
Checkpoint load_checkpoint_arg(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw DomainError(what + " not found: " + path.string());
    return load_checkpoint(path);
}

/// Plain-text run log, mirrored to stdout.
class RunLog {
  public:
    explicit RunLog(const fs::path& dir) {
        fs::create_directories(dir);
        out_.open(dir / "run.log", std::ios::trunc);
        if (!out_) throw std::runtime_error("cannot open " + (dir / "run.log").string());
    }
    RunLog() = default;  // log to stdout only

    void line(const std::string& text) {
        std::cout << text << "\n";
        if (out_.is_open()) {
            out_ << text << "\n";
            out_.flush();
        }
    }

  private:
    std::ofstream out_;
};

void log_loss_curve(RunLog& log, const TrainReport& report, std::size_t every) {
    for (std::size_t i = 0; i < report.losses.size(); ++i)
        if (i % every == 0 || i + 1 == report.losses.size())
            log.line("step " + std::to_string(i) + " loss " + std::to_string(report.losses[i]));
    log.line("loss window: first " + std::to_string(report.initial_window) + " last " +
             std::to_string(report.final_window));
}

struct CommonTrainFlags {
    std::string config_path;
    double lr = -1.0;
    std::int64_t batch = -1;
    std::int64_t epochs = -1;
    std::int64_t steps = -1;
    std::int64_t log_every = -1;
    std::optional<std::uint64_t> seed;
    std::string ablation;

    void attach(CLI::App* cmd, bool with_epochs, bool with_steps) {
        cmd->add_option("--config", config_path, "JSON training config to start from");
        cmd->add_option("--lr", lr, "learning rate override (must be > 0)");
        cmd->add_option("--batch", batch, "batch size override");
        if (with_epochs) cmd->add_option("--epochs", epochs, "pass count override");
        if (with_steps) cmd->add_option("--steps", steps, "optimizer step count override");
        cmd->add_option("--log-every", log_every, "loss log / frozen audit cadence");
        cmd->add_option("--seed", seed, "run seed override");
        cmd->add_option("--ablation", ablation,
                        "adapter mode: full, no-text-gate, no-update, naive-parallel-2d");
    }

    TrainConfig resolve(TrainPhase phase) const {
        TrainConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw DomainError("cannot read config " + config_path);
            cfg = train_config_from_json(std::string((std::istreambuf_iterator<char>(in)), {}));
        }
        cfg.phase = phase;
        if (lr >= 0.0) cfg.learning_rate = lr;
        if (batch >= 0) cfg.batch_size = static_cast<std::size_t>(batch);
        if (epochs >= 0) cfg.epochs = static_cast<std::size_t>(epochs);
        if (steps >= 0) cfg.steps = static_cast<std::size_t>(steps);
        if (log_every >= 0) cfg.log_every = static_cast<std::size_t>(log_every);
        if (seed) cfg.seed = *seed;
        if (!ablation.empty()) cfg.ablation = parse_mode(ablation);
        if (!(cfg.learning_rate > 0.0))
            throw DomainError("training runs need a positive learning rate; got " +
                              std::to_string(cfg.learning_rate));
        cfg.validate();
        return cfg;
    }
};

Tensor<float> replicate_image(const Tensor<float>& image, std::size_t frames) {
    Tensor<float> out(Shape{frames, image.shape[0], image.shape[1], image.shape[2]});
    for (std::size_t f = 0; f < frames; ++f)
        std::copy(image.data.begin(), image.data.end(), out.data.begin() + f * image.size());
    return out;
}

Tensor<float> frame_of(const Tensor<float>& video, std::size_t f) {
    Tensor<float> out(Shape{video.shape[1], video.shape[2], video.shape[3]});
    std::copy(video.data.begin() + f * out.size(), video.data.begin() + (f + 1) * out.size(),
              out.data.begin());
    return out;
}

std::size_t outside_pixels(const Tensor<float>& mask) {
    std::size_t n = 0;
    for (float v : mask.data) n += v == 0.0f;
    return n;
}

int run_gen_data(const fs::path& out_dir, std::size_t n, std::uint64_t seed,
                 const std::string& kind, std::size_t frames, EvalReport report) {
    RunLog log(out_dir);
    const fs::path data_dir = out_dir / "dataset";
    if (kind == "edit") {
        const auto pairs = make_edit_dataset(n, seed);
        write_edit_dataset(data_dir, pairs);
        report.scalars["pairs"] = static_cast<double>(pairs.size());
        log.line("wrote " + std::to_string(pairs.size()) + " edit pairs to " + data_dir.string());
    } else if (kind == "video") {
        const auto clips = make_video_dataset(n, frames, seed);
        write_video_dataset(data_dir, clips);
        report.scalars["clips"] = static_cast<double>(clips.size());
        report.scalars["frames"] = static_cast<double>(frames);
        log.line("wrote " + std::to_string(clips.size()) + " clips of " + std::to_string(frames) +
                 " frames to " + data_dir.string());
    } else {
        throw DomainError("unknown dataset kind '" + kind + "' (want edit or video)");
    }
    report.dataset_digest = dataset_digest_of(data_dir);
    log.line("dataset digest " + report.dataset_digest);
    write_report(out_dir / "report.json", report);
    return 0;
}

int run_pretrain(const fs::path& out_dir, const fs::path& data_dir, const CommonTrainFlags& flags,
                 EvalReport report) {
    TrainConfig cfg = flags.resolve(TrainPhase::Pretrain);
    RunLog log(out_dir);
    const auto clips = read_video_dataset(data_dir);
    report.dataset_digest = dataset_digest_of(data_dir);
    cfg.checkpoint_path = (out_dir / "checkpoint.ive").string();
    report.config_digest = config_digest(cfg);
    log.line("pretraining on " + std::to_string(clips.size()) + " clips, " +
             std::to_string(cfg.steps) + " steps, lr " + std::to_string(cfg.learning_rate));

    const TrainResult result = pretrain_backbone(cfg, clips);
    report.checkpoint_digest = checkpoint_digest(result.checkpoint);
    report.loss_curve = result.report.losses;
    report.loss_initial_window = result.report.initial_window;
    report.loss_final_window = result.report.final_window;
    report.scalars["heldout_initial"] = result.report.heldout_initial;
    report.scalars["heldout_final"] = result.report.heldout_final;
    if (result.report.heldout_initial > 0.0)
        report.scalars["heldout_drop"] =
            1.0 - result.report.heldout_final / result.report.heldout_initial;
    log_loss_curve(log, result.report, cfg.log_every);
    log.line("held-out loss " + std::to_string(result.report.heldout_initial) + " -> " +
             std::to_string(result.report.heldout_final));
    log.line("checkpoint " + cfg.checkpoint_path + " digest " + report.checkpoint_digest);
    write_report(out_dir / "report.json", report);
    return 0;
}

int run_train_edit(const fs::path& out_dir, const fs::path& data_dir, const fs::path& backbone,
                   const fs::path& resume, const CommonTrainFlags& flags, EvalReport report) {
    TrainConfig cfg = flags.resolve(TrainPhase::EditTrain);
    RunLog log(out_dir);
    const auto pairs = read_edit_dataset(data_dir);
    report.dataset_digest = dataset_digest_of(data_dir);

    Checkpoint start;
    if (!resume.empty()) {
        start = load_checkpoint_arg(resume, "resume checkpoint");
        log.line("resuming from " + resume.string() + " at step " + std::to_string(start.step));
    } else {
        const Checkpoint bb = load_checkpoint_arg(backbone, "backbone checkpoint");
        start = attach_and_inherit(bb, cfg.seed);
        log.line("attached adapters to backbone " + backbone.string());
    }
    cfg.model = start.config.model;  // the checkpoint's geometry is authoritative
    cfg.checkpoint_path = (out_dir / "checkpoint.ive").string();
    report.config_digest = config_digest(cfg);
    report.mode = to_string(cfg.ablation);
    log.line("edit training on " + std::to_string(pairs.size()) + " pairs, " +
             std::to_string(cfg.epochs) + " epochs, batch " + std::to_string(cfg.batch_size) +
             ", mode " + report.mode);

    const TrainResult result = train_edit(cfg, pairs, start);
    report.checkpoint_digest = checkpoint_digest(result.checkpoint);
    report.loss_curve = result.report.losses;
    report.loss_initial_window = result.report.initial_window;
    report.loss_final_window = result.report.final_window;
    report.scalars["steps"] = static_cast<double>(result.checkpoint.step);
    report.scalars["pairs"] = static_cast<double>(pairs.size());
    log_loss_curve(log, result.report, cfg.log_every);
    log.line("checkpoint " + cfg.checkpoint_path + " digest " + report.checkpoint_digest);
    write_report(out_dir / "report.json", report);
    return 0;
}

int run_sample(const fs::path& out_dir, const fs::path& ckpt_path, const fs::path& data_dir,
               std::size_t index, std::size_t frames, std::uint64_t seed, std::size_t steps,
               const std::string& mode_name, EvalReport report) {
    if (frames < 1) throw DomainError("--frames must be at least 1");
    const Checkpoint ckpt = load_checkpoint_arg(ckpt_path, "checkpoint");
    const DiTConfig& model = ckpt.config.model;
    if (frames > model.frames_max)
        throw DomainError("--frames " + std::to_string(frames) + " exceeds the model maximum " +
                          std::to_string(model.frames_max));
    const auto pairs = read_edit_dataset(data_dir);
    if (index >= pairs.size())
        throw DomainError("--index " + std::to_string(index) + " out of range; dataset has " +
                          std::to_string(pairs.size()) + " pairs");
    const AblationMode mode = mode_name.empty() ? ckpt.config.ablation : parse_mode(mode_name);
    SamplerConfig scfg;
    scfg.steps = steps;
    scfg.validate();

    RunLog log(out_dir);
    report.config_digest = config_digest(ckpt.config);
    report.checkpoint_digest = checkpoint_digest(ckpt);
    report.dataset_digest = dataset_digest_of(data_dir);
    report.mode = to_string(mode);

    const EditPairSample& pair = pairs[index];
    Rng rng = make_rng(seed, "cli_sample", index);
    const Tensor<float> source = replicate_image(pair.src_image, frames);
    const Tensor<float> video = edit_sample(model, ckpt.params, mode, source, pair.src_prompt,
                                            pair.edit_prompt, scfg, rng);

    write_ppm(out_dir / "source.ppm", pair.src_image);
    write_ppm(out_dir / "target.ppm", pair.edit_image);
    for (std::size_t f = 0; f < frames; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%02zu.ppm", f);
        write_ppm(out_dir / name, frame_of(video, f));
    }
    log.line("sampled pair " + std::to_string(index) + " at " + std::to_string(frames) +
             " frames with " + std::to_string(steps) + " integration steps");

    report.scalars["index"] = static_cast<double>(index);
    report.scalars["frames"] = static_cast<double>(frames);
    const Tensor<float> first = frame_of(video, 0);
    report.scalars["edit_mse"] = masked_mse(first, pair.edit_image, pair.edit_mask, true);
    if (outside_pixels(pair.edit_mask) > 0)
        report.scalars["preserve_mse"] = masked_mse(first, pair.src_image, pair.edit_mask, false);
    if (frames >= 2) report.scalars["adjacent_mse"] = adjacent_frame_mse(video);
    log.line("edit mse " + std::to_string(report.scalars["edit_mse"]));
    write_report(out_dir / "report.json", report);
    return 0;
}

/// Shared by `eval` and the per-mode reports of `ablate`.
EvalReport evaluate_checkpoint(RunLog& log, const Checkpoint& ckpt,
                               const std::vector<EditPairSample>& pairs, AblationMode mode,
                               std::uint64_t seed, const SamplerConfig& scfg,
                               const std::vector<std::size_t>& frame_counts, std::size_t audit,
                               EvalReport report) {
    const DiTConfig& model = ckpt.config.model;
    report.config_digest = config_digest(ckpt.config);
    report.checkpoint_digest = checkpoint_digest(ckpt);
    report.mode = to_string(mode);

    report.edit = eval_edit_pairs(model, ckpt.params, mode, pairs, seed, scfg);
    self_audit(report.edit, pairs, seed, audit);
    log.line("edit mse " + std::to_string(report.edit.mean_edit_mse) + " over " +
             std::to_string(pairs.size()) + " pairs (self-audit x" +
             std::to_string(std::min(audit, pairs.size())) + " ok)");
    if (report.edit.psnr_pair_count > 0)
        log.line("preservation " + std::to_string(report.edit.mean_preserve_psnr_db) + " dB over " +
                 std::to_string(report.edit.psnr_pair_count) + " pairs, " +
                 std::to_string(report.edit.preserve_exact_count) + " exact");

    for (std::size_t f : frame_counts) {
        if (f < 2 || f > model.frames_max) {
            log.line("skipping temporal eval at " + std::to_string(f) +
                     " frames (model supports 2.." + std::to_string(model.frames_max) + ")");
            continue;
        }
        report.temporal.push_back(
            eval_temporal_consistency(model, ckpt.params, mode, pairs, f, seed, scfg));
        log.line("temporal mse at " + std::to_string(f) + " frames: " +
                 std::to_string(report.temporal.back().mean_adjacent_mse));
    }
    return report;
}

int run_eval(const fs::path& out_dir, const fs::path& ckpt_path, const fs::path& data_dir,
             const fs::path& baseline_path, std::uint64_t seed, std::size_t steps,
             const std::string& mode_name, std::size_t limit,
             std::vector<std::size_t> frame_counts, std::size_t audit, bool csv,
             std::size_t dump_images, EvalReport report) {
    if (audit < 1) throw DomainError("--audit must be at least 1");
    const Checkpoint ckpt = load_checkpoint_arg(ckpt_path, "checkpoint");
    auto pairs = read_edit_dataset(data_dir);
    report.dataset_digest = dataset_digest_of(data_dir);
    if (limit > 0 && limit < pairs.size()) pairs.resize(limit);
    const AblationMode mode = mode_name.empty() ? ckpt.config.ablation : parse_mode(mode_name);
    SamplerConfig scfg;
    scfg.steps = steps;
    scfg.validate();

    RunLog log(out_dir);
    report = evaluate_checkpoint(log, ckpt, pairs, mode, seed, scfg, frame_counts, audit,
                                 std::move(report));

    if (!baseline_path.empty()) {
        // The edit model before any adapter training: backbone weights with
        // freshly attached (exactly no-op) adapters.
        const Checkpoint bb = load_checkpoint_arg(baseline_path, "baseline checkpoint");
        const Checkpoint zero = attach_and_inherit(bb, seed);
        const EditEval base =
            eval_edit_pairs(zero.config.model, zero.params, mode, pairs, seed, scfg);
        report.scalars["baseline_mean_edit_mse"] = base.mean_edit_mse;
        report.scalars["edit_mse_improvement"] = base.mean_edit_mse - report.edit.mean_edit_mse;
        if (base.psnr_pair_count > 0)
            report.scalars["baseline_mean_preserve_psnr_db"] = base.mean_preserve_psnr_db;
        if (base.psnr_pair_count > 0 && report.edit.psnr_pair_count > 0)
            report.scalars["preserve_psnr_delta_db"] =
                report.edit.mean_preserve_psnr_db - base.mean_preserve_psnr_db;
        log.line("baseline edit mse " + std::to_string(base.mean_edit_mse) + ", improvement " +
                 std::to_string(report.scalars["edit_mse_improvement"]));
    }

    if (csv) {
        std::ofstream table(out_dir / "per_sample.csv", std::ios::trunc);
        table << per_sample_csv(report.edit);
        log.line("wrote per_sample.csv");
    }
    for (std::size_t i = 0; i < std::min(dump_images, report.edit.outputs.size()); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%03zu.ppm", i);
        write_ppm(out_dir / "samples" / name, report.edit.outputs[i]);
    }
    if (dump_images > 0) log.line("dumped " + std::to_string(std::min(
                                      dump_images, report.edit.outputs.size())) + " samples");
    write_report(out_dir / "report.json", report);
    return 0;
}

int run_gradcheck(const fs::path& out_dir, std::uint64_t seed, EvalReport report) {
    const auto entries = run_gradcheck_suite(seed);
    std::size_t failures = 0;
    std::printf("%-40s %12s %10s  %s\n", "check", "rel_err", "tol", "status");
    for (const GradCheckEntry& e : entries) {
        std::printf("%-40s %12.3e %10.1e  %s\n", e.name.c_str(), e.rel_err, e.tolerance,
                    e.pass ? "PASS" : "FAIL");
        failures += !e.pass;
    }
    std::printf("%zu/%zu checks passed\n", entries.size() - failures, entries.size());

    if (!out_dir.empty()) {
        RunLog log(out_dir);
        for (const GradCheckEntry& e : entries) {
            report.scalars[e.name] = e.rel_err;
            log.line(e.name + " rel_err " + std::to_string(e.rel_err) +
                     (e.pass ? " PASS" : " FAIL"));
        }
        report.scalars["failures"] = static_cast<double>(failures);
        write_report(out_dir / "report.json", report);
    }
    if (failures > 0) throw NonFiniteState(std::to_string(failures) + " gradient checks failed");
    return 0;
}

int run_ablate(const fs::path& out_dir, const fs::path& data_dir, const fs::path& backbone,
               std::size_t eval_limit, std::size_t steps, const CommonTrainFlags& flags,
               EvalReport summary) {
    TrainConfig cfg = flags.resolve(TrainPhase::EditTrain);
    RunLog log(out_dir);
    auto pairs = read_edit_dataset(data_dir);
    summary.dataset_digest = dataset_digest_of(data_dir);
    const Checkpoint bb = load_checkpoint_arg(backbone, "backbone checkpoint");
    cfg.model = bb.config.model;
    summary.config_digest = config_digest(cfg);
    summary.checkpoint_digest = checkpoint_digest(bb);

    // Hold out the corpus tail for scoring; train on the head.
    std::size_t held = std::min<std::size_t>(eval_limit, pairs.size() / 10);
    if (held < 1) held = 1;
    if (pairs.size() <= held + cfg.batch_size)
        throw DomainError("ablation needs more pairs than batch + held-out (" +
                          std::to_string(pairs.size()) + " given)");
    const std::vector<EditPairSample> eval_pairs(pairs.end() - held, pairs.end());
    pairs.resize(pairs.size() - held);
    log.line("ablation sweep: " + std::to_string(pairs.size()) + " training pairs, " +
             std::to_string(held) + " held out");

    SamplerConfig scfg;
    scfg.steps = steps;
    scfg.validate();
    const auto runs = run_ablation(cfg, pairs, bb);
    for (const AblationRun& run : runs) {
        const std::string name = to_string(run.mode);
        const fs::path mode_dir = out_dir / name;
        save_checkpoint(mode_dir / "checkpoint.ive", run.result.checkpoint);

        RunLog mode_log(mode_dir);
        EvalReport mode_report;
        mode_report.command = summary.command + " [" + name + "]";
        mode_report.dataset_digest = summary.dataset_digest;
        mode_report.seed = cfg.seed;
        mode_report.timestamp = summary.timestamp;
        mode_report.loss_curve = run.result.report.losses;
        mode_report.loss_initial_window = run.result.report.initial_window;
        mode_report.loss_final_window = run.result.report.final_window;
        mode_report = evaluate_checkpoint(mode_log, run.result.checkpoint, eval_pairs, run.mode,
                                          cfg.seed, scfg, {}, 5, std::move(mode_report));
        write_report(mode_dir / "report.json", mode_report);

        summary.scalars[name + "_mean_edit_mse"] = mode_report.edit.mean_edit_mse;
        summary.scalars[name + "_final_window"] = run.result.report.final_window;
        log.line(name + ": edit mse " + std::to_string(mode_report.edit.mean_edit_mse) +
                 ", final loss window " + std::to_string(run.result.report.final_window));
    }
    log.line("score ordering across modes is reported for inspection only, not gated");
    write_report(out_dir / "report.json", summary);
    return 0;
}

bool is_validation_error(const std::exception& e) {
    return dynamic_cast<const DomainError*>(&e) || dynamic_cast<const InvalidMode*>(&e) ||
           dynamic_cast<const ShapeMismatch*>(&e) || dynamic_cast<const IncompatibleShapes*>(&e) ||
           dynamic_cast<const MissingPrompt*>(&e) || dynamic_cast<const InvalidAxis*>(&e) ||
           dynamic_cast<const InapplicableTask*>(&e) || dynamic_cast<const EmptyMask*>(&e) ||
           dynamic_cast<const std::invalid_argument*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"video-editing-from-images: training, sampling, and evaluation"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a procedural dataset");
    std::string gen_out, gen_kind = "edit";
    std::size_t gen_n = 2000, gen_frames = 8;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n", gen_n, "number of samples");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--kind", gen_kind, "edit (image pairs) or video (clips)");
    gen->add_option("--frames", gen_frames, "frames per clip (video only)");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "phase 1: train the video backbone");
    std::string pre_out, pre_data;
    CommonTrainFlags pre_flags;
    pre->add_option("--out", pre_out, "output directory")->required();
    pre->add_option("--data", pre_data, "video dataset directory")->required();
    pre_flags.attach(pre, /*with_epochs=*/false, /*with_steps=*/true);

    // train-edit
    auto* tre = app.add_subcommand("train-edit", "phase 2: train the edit adapters");
    std::string tre_out, tre_data, tre_backbone, tre_resume;
    CommonTrainFlags tre_flags;
    tre->add_option("--out", tre_out, "output directory")->required();
    tre->add_option("--data", tre_data, "edit-pair dataset directory")->required();
    auto* opt_bb = tre->add_option("--backbone", tre_backbone, "phase-1 checkpoint to attach to");
    auto* opt_res = tre->add_option("--resume", tre_resume, "phase-2 checkpoint to continue");
    opt_bb->excludes(opt_res);
    tre_flags.attach(tre, /*with_epochs=*/true, /*with_steps=*/false);

    // sample
    auto* smp = app.add_subcommand("sample", "edit one source image and dump frames");
    std::string smp_out, smp_ckpt, smp_data, smp_mode;
    std::size_t smp_index = 0, smp_frames = 1, smp_steps = 32;
    std::uint64_t smp_seed = 0;
    smp->add_option("--out", smp_out, "output directory")->required();
    smp->add_option("--ckpt", smp_ckpt, "edit checkpoint to sample from")->required();
    smp->add_option("--data", smp_data, "edit-pair dataset directory")->required();
    smp->add_option("--index", smp_index, "pair index to edit");
    smp->add_option("--frames", smp_frames, "frames to synthesize from the static source");
    smp->add_option("--steps", smp_steps, "integration steps");
    smp->add_option("--seed", smp_seed, "sampling seed");
    smp->add_option("--mode", smp_mode, "adapter mode override");

    // eval
    auto* evl = app.add_subcommand("eval", "score a checkpoint on held-out pairs");
    std::string evl_out, evl_ckpt, evl_data, evl_mode, evl_baseline;
    std::size_t evl_steps = 32, evl_limit = 0, evl_audit = 5, evl_dump = 0;
    std::uint64_t evl_seed = 0;
    std::vector<std::size_t> evl_frames = {2, 4, 8};
    bool evl_csv = false;
    evl->add_option("--out", evl_out, "output directory")->required();
    evl->add_option("--ckpt", evl_ckpt, "checkpoint to evaluate")->required();
    evl->add_option("--data", evl_data, "edit-pair dataset directory")->required();
    evl->add_option("--baseline", evl_baseline,
                    "phase-1 checkpoint; adds zero-init adapter comparison");
    evl->add_option("--seed", evl_seed, "evaluation seed");
    evl->add_option("--steps", evl_steps, "integration steps");
    evl->add_option("--mode", evl_mode, "adapter mode override");
    evl->add_option("--limit", evl_limit, "evaluate only the first N pairs (0 = all)");
    evl->add_option("--temporal-frames", evl_frames, "frame counts for temporal consistency");
    evl->add_option("--audit", evl_audit, "self-audit sample count");
    evl->add_flag("--csv", evl_csv, "also write per_sample.csv");
    evl->add_option("--dump-images", evl_dump, "write the first N outputs as PPM");

    // gradcheck
    auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::string grd_out;
    std::uint64_t grd_seed = 7;
    grd->add_option("--seed", grd_seed, "probe seed");
    grd->add_option("--out", grd_out, "optional report directory");

    // ablate
    auto* abl = app.add_subcommand("ablate", "train and score all four adapter modes");
    std::string abl_out, abl_data, abl_backbone;
    std::size_t abl_eval_limit = 50, abl_steps = 32;
    CommonTrainFlags abl_flags;
    abl->add_option("--out", abl_out, "output directory")->required();
    abl->add_option("--data", abl_data, "edit-pair dataset directory")->required();
    abl->add_option("--backbone", abl_backbone, "phase-1 checkpoint")->required();
    abl->add_option("--eval-limit", abl_eval_limit, "max held-out pairs per mode");
    abl->add_option("--steps", abl_steps, "integration steps for scoring");
    abl_flags.attach(abl, /*with_epochs=*/true, /*with_steps=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 1;
    }

    EvalReport report;
    report.command = join_command(argc, argv);
    report.timestamp = iso_timestamp();

    try {
        if (*gen) {
            report.seed = gen_seed;
            return run_gen_data(gen_out, gen_n, gen_seed, gen_kind, gen_frames, std::move(report));
        }
        if (*pre) {
            report.seed = pre_flags.seed.value_or(TrainConfig{}.seed);
            return run_pretrain(pre_out, pre_data, pre_flags, std::move(report));
        }
        if (*tre) {
            report.seed = tre_flags.seed.value_or(TrainConfig{}.seed);
            if (tre_backbone.empty() && tre_resume.empty())
                throw DomainError("train-edit needs --backbone (fresh adapters) or --resume");
            return run_train_edit(tre_out, tre_data, tre_backbone, tre_resume, tre_flags,
                                  std::move(report));
        }
        if (*smp) {
            report.seed = smp_seed;
            return run_sample(smp_out, smp_ckpt, smp_data, smp_index, smp_frames, smp_seed,
                              smp_steps, smp_mode, std::move(report));
        }
        if (*evl) {
            report.seed = evl_seed;
            return run_eval(evl_out, evl_ckpt, evl_data, evl_baseline, evl_seed, evl_steps,
                            evl_mode, evl_limit, evl_frames, evl_audit, evl_csv, evl_dump,
                            std::move(report));
        }
        if (*grd) {
            report.seed = grd_seed;
            return run_gradcheck(grd_out, grd_seed, std::move(report));
        }
        if (*abl) {
            report.seed = abl_flags.seed.value_or(TrainConfig{}.seed);
            return run_ablate(abl_out, abl_data, abl_backbone, abl_eval_limit, abl_steps,
                              abl_flags, std::move(report));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_validation_error(e) ? 1 : 2;
    }
    return 0;
}
