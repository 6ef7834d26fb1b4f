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

#include "ive/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ive/errors.hpp"
#include "ive/rng.hpp"
#include "nlohmann/json.hpp"

namespace ive {

namespace {

using json = nlohmann::json;

void check_image_pair(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask) {
    if (a.rank() != 3 || b.rank() != 3)
        throw ShapeMismatch("masked_mse wants [C,H,W] images, got " + shape_str(a.shape) + " and " +
                            shape_str(b.shape));
    if (a.shape != b.shape)
        throw ShapeMismatch("masked_mse images disagree: " + shape_str(a.shape) + " vs " +
                            shape_str(b.shape));
    if (mask.rank() != 3 || mask.shape[0] != 1 || mask.shape[1] != a.shape[1] ||
        mask.shape[2] != a.shape[2])
        throw ShapeMismatch("masked_mse mask " + shape_str(mask.shape) + " does not cover " +
                            shape_str(a.shape));
}

Tensor<float> drop_leading_frame(const Tensor<float>& video) {
    // [1,C,H,W] -> [C,H,W]; the buffer is already in the right order.
    return Tensor<float>(Shape{video.shape[1], video.shape[2], video.shape[3]}, video.data);
}

Tensor<float> replicate_frames(const Tensor<float>& image, std::size_t frames) {
    Tensor<float> out(Shape{frames, image.shape[0], image.shape[1], image.shape[2]});
    for (std::size_t f = 0; f < frames; ++f)
        std::copy(image.data.begin(), image.data.end(), out.data.begin() + f * image.size());
    return out;
}

std::size_t pixels_selected(const Tensor<float>& mask, bool inside) {
    std::size_t n = 0;
    for (float v : mask.data) n += inside ? (v != 0.0f) : (v == 0.0f);
    return n;
}

void check_eval_inputs(const DiTConfig& cfg, const std::vector<EditPairSample>& pairs) {
    if (pairs.empty()) throw DomainError("evaluation needs at least one pair");
    const Shape want{cfg.channels, cfg.image_size, cfg.image_size};
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].src_image.shape != want || pairs[i].edit_image.shape != want)
            throw ShapeMismatch("pair " + std::to_string(i) + " images " +
                                shape_str(pairs[i].src_image.shape) + " do not fit the model " +
                                shape_str(want));
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json per_sample_entry(const EditEval& e, std::size_t i) {
    json row;
    row["index"] = i;
    row["edit_mse"] = e.edit_mse[i];
    if (!e.preserve_defined[i]) {
        row["preserve_mse"] = nullptr;
        row["preserve_psnr_db"] = nullptr;
    } else if (e.preserve_exact[i]) {
        row["preserve_mse"] = 0.0;
        row["preserve_psnr_db"] = "exact";
    } else {
        row["preserve_mse"] = e.preserve_mse[i];
        row["preserve_psnr_db"] = psnr_db(e.preserve_mse[i]);
    }
    return row;
}

}  // namespace

double masked_mse(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask,
                  bool inside) {
    check_image_pair(a, b, mask);
    const std::size_t ch = a.shape[0], hw = a.shape[1] * a.shape[2];
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        const bool sel = inside ? (mask.data[p] != 0.0f) : (mask.data[p] == 0.0f);
        if (!sel) continue;
        for (std::size_t c = 0; c < ch; ++c) {
            const double d =
                static_cast<double>(a.data[c * hw + p]) - static_cast<double>(b.data[c * hw + p]);
            sum += d * d;
        }
        count += ch;
    }
    if (count == 0)
        throw EmptyMask(std::string("masked_mse selected no pixels ") +
                        (inside ? "inside" : "outside") + " the mask");
    return sum / static_cast<double>(count);
}

double psnr_db(double mse) {
    if (!(mse > 0.0))
        throw DomainError("psnr_db needs a positive mse, got " + fmt_double(mse) +
                          " (exact matches are reported as a sentinel, not a number)");
    return 10.0 * std::log10(1.0 / mse);
}

double adjacent_frame_mse(const Tensor<float>& video) {
    if (video.rank() != 4)
        throw ShapeMismatch("adjacent_frame_mse wants [F,C,H,W], got " + shape_str(video.shape));
    const std::size_t frames = video.shape[0];
    if (frames < 2)
        throw DomainError("adjacent_frame_mse needs >= 2 frames, got " + std::to_string(frames));
    const std::size_t per = video.size() / frames;
    double sum = 0.0;
    for (std::size_t f = 0; f + 1 < frames; ++f)
        for (std::size_t i = 0; i < per; ++i) {
            const double d = static_cast<double>(video.data[(f + 1) * per + i]) -
                             static_cast<double>(video.data[f * per + i]);
            sum += d * d;
        }
    return sum / static_cast<double>((frames - 1) * per);
}

EditEval eval_edit_pairs(const DiTConfig& cfg, const ParamStore<float>& params, AblationMode mode,
                         const std::vector<EditPairSample>& pairs, std::uint64_t seed,
                         const SamplerConfig& scfg) {
    check_eval_inputs(cfg, pairs);
    EditEval out;
    out.outputs.reserve(pairs.size());
    double edit_sum = 0.0, psnr_sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const EditPairSample& pair = pairs[i];
        Rng rng = make_rng(seed, "eval_noise", i);
        Tensor<float> source(Shape{1, cfg.channels, cfg.image_size, cfg.image_size},
                             pair.src_image.data);
        Tensor<float> sampled =
            edit_sample(cfg, params, mode, source, pair.src_prompt, pair.edit_prompt, scfg, rng);
        Tensor<float> image = drop_leading_frame(sampled);

        out.edit_mse.push_back(masked_mse(image, pair.edit_image, pair.edit_mask, true));
        edit_sum += out.edit_mse.back();

        const bool defined = pixels_selected(pair.edit_mask, false) > 0;
        out.preserve_defined.push_back(defined);
        if (!defined) {
            out.preserve_mse.push_back(0.0);
            out.preserve_exact.push_back(false);
        } else {
            const double mse = masked_mse(image, pair.src_image, pair.edit_mask, false);
            out.preserve_mse.push_back(mse);
            const bool exact = mse == 0.0;
            out.preserve_exact.push_back(exact);
            if (exact) {
                ++out.preserve_exact_count;
            } else {
                psnr_sum += psnr_db(mse);
                ++out.psnr_pair_count;
            }
        }
        out.outputs.push_back(std::move(image));
    }
    out.mean_edit_mse = edit_sum / static_cast<double>(pairs.size());
    if (out.psnr_pair_count > 0)
        out.mean_preserve_psnr_db = psnr_sum / static_cast<double>(out.psnr_pair_count);
    return out;
}

TemporalEval eval_temporal_consistency(const DiTConfig& cfg, const ParamStore<float>& params,
                                       AblationMode mode,
                                       const std::vector<EditPairSample>& pairs,
                                       std::size_t frames, std::uint64_t seed,
                                       const SamplerConfig& scfg) {
    check_eval_inputs(cfg, pairs);
    if (frames < 2)
        throw DomainError("temporal consistency needs >= 2 frames, got " + std::to_string(frames));
    if (frames > cfg.frames_max)
        throw DomainError("temporal eval at " + std::to_string(frames) +
                          " frames exceeds the model maximum " + std::to_string(cfg.frames_max));
    TemporalEval out;
    out.frames = frames;
    const std::string stream = "temporal" + std::to_string(frames);
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        Rng rng = make_rng(seed, stream, i);
        Tensor<float> source = replicate_frames(pairs[i].src_image, frames);
        Tensor<float> sampled = edit_sample(cfg, params, mode, source, pairs[i].src_prompt,
                                            pairs[i].edit_prompt, scfg, rng);
        out.adjacent_mse.push_back(adjacent_frame_mse(sampled));
        sum += out.adjacent_mse.back();
    }
    out.mean_adjacent_mse = sum / static_cast<double>(pairs.size());
    return out;
}

void self_audit(const EditEval& eval, const std::vector<EditPairSample>& pairs,
                std::uint64_t seed, std::size_t count) {
    const std::size_t n = pairs.size();
    if (n == 0) throw DomainError("self_audit needs at least one pair");
    if (eval.outputs.size() != n || eval.edit_mse.size() != n || eval.preserve_mse.size() != n ||
        eval.preserve_defined.size() != n || eval.preserve_exact.size() != n)
        throw DomainError("self_audit: evaluation tables do not match the pair count");

    // Independent recomputation: reversed traversal order and wider
    // accumulators, so any bookkeeping bug shows up as a numeric mismatch.
    auto region_stats = [](const Tensor<float>& a, const Tensor<float>& b,
                           const Tensor<float>& mask, bool inside) {
        const std::size_t ch = a.shape[0], hw = a.shape[1] * a.shape[2];
        long double sum = 0.0L;
        std::size_t sel = 0;
        for (std::size_t p = hw; p-- > 0;) {
            const bool hit = inside ? (mask.data[p] != 0.0f) : (mask.data[p] == 0.0f);
            if (!hit) continue;
            ++sel;
            for (std::size_t c = ch; c-- > 0;) {
                const long double d = static_cast<long double>(a.data[c * hw + p]) -
                                      static_cast<long double>(b.data[c * hw + p]);
                sum += d * d;
            }
        }
        struct R {
            std::size_t pixels;
            long double mse;
        };
        return R{sel, sel ? sum / static_cast<long double>(sel * ch) : 0.0L};
    };
    auto close = [](long double want, double got) {
        const long double diff = want - static_cast<long double>(got);
        const long double tol =
            1e-12L * std::max<long double>(1.0L, std::fabs(want));
        return std::fabs(diff) <= tol;
    };

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(seed, "audit");
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);
    const std::size_t audits = std::min(count, n);

    for (std::size_t k = 0; k < audits; ++k) {
        const std::size_t i = order[k];
        const EditPairSample& pair = pairs[i];
        const Tensor<float>& image = eval.outputs[i];
        const std::string tag = "self_audit pair " + std::to_string(i) + ": ";
        if (image.shape != pair.src_image.shape)
            throw DomainError(tag + "stored output shape " + shape_str(image.shape) +
                              " does not match the source " + shape_str(pair.src_image.shape));

        const auto edit = region_stats(image, pair.edit_image, pair.edit_mask, true);
        if (edit.pixels == 0) throw DomainError(tag + "edit mask selects no pixels");
        if (!close(edit.mse, eval.edit_mse[i]))
            throw DomainError(tag + "edit_mse " + fmt_double(eval.edit_mse[i]) +
                              " disagrees with the recomputed " +
                              fmt_double(static_cast<double>(edit.mse)));

        const auto keep = region_stats(image, pair.src_image, pair.edit_mask, false);
        const bool defined = keep.pixels > 0;
        if (defined != static_cast<bool>(eval.preserve_defined[i]))
            throw DomainError(tag + "preserve_defined flag disagrees with the mask coverage");
        if (!defined) continue;
        const bool exact = keep.mse == 0.0L;
        if (exact != static_cast<bool>(eval.preserve_exact[i]))
            throw DomainError(tag + "preserve_exact flag disagrees with the recomputation");
        if (!close(keep.mse, eval.preserve_mse[i]))
            throw DomainError(tag + "preserve_mse " + fmt_double(eval.preserve_mse[i]) +
                              " disagrees with the recomputed " +
                              fmt_double(static_cast<double>(keep.mse)));
    }

    // Aggregates cover every pair, recomputed back to front.
    long double edit_sum = 0.0L, psnr_sum = 0.0L;
    std::size_t exact_count = 0, psnr_count = 0;
    for (std::size_t i = n; i-- > 0;) {
        edit_sum += static_cast<long double>(eval.edit_mse[i]);
        if (!eval.preserve_defined[i]) continue;
        if (eval.preserve_exact[i]) {
            ++exact_count;
        } else {
            psnr_sum += static_cast<long double>(psnr_db(eval.preserve_mse[i]));
            ++psnr_count;
        }
    }
    if (exact_count != eval.preserve_exact_count || psnr_count != eval.psnr_pair_count)
        throw DomainError("self_audit: preservation counts disagree with the per-pair flags");
    if (!close(edit_sum / static_cast<long double>(n), eval.mean_edit_mse))
        throw DomainError("self_audit: mean_edit_mse disagrees with the per-pair table");
    const long double psnr_mean =
        psnr_count ? psnr_sum / static_cast<long double>(psnr_count) : 0.0L;
    if (!close(psnr_mean, eval.mean_preserve_psnr_db))
        throw DomainError("self_audit: mean_preserve_psnr_db disagrees with the per-pair table");
}

std::string report_json(const EvalReport& report) {
    json root;
    root["version"] = report.version;
    root["metric_scope"] =
        "exact pixel metrics on procedural scenes; not comparable to external benchmark scores";
    root["command"] = report.command;
    root["config_digest"] = report.config_digest;
    root["checkpoint_digest"] = report.checkpoint_digest;
    root["dataset_digest"] = report.dataset_digest;
    root["mode"] = report.mode;
    root["seed"] = report.seed;
    root["timestamp"] = report.timestamp;

    json metrics;
    if (report.edit.edit_mse.empty()) {
        metrics["edit"] = nullptr;
    } else {
        metrics["edit"] = {{"pair_count", report.edit.edit_mse.size()},
                           {"mean_edit_mse", report.edit.mean_edit_mse},
                           {"mean_preserve_psnr_db", report.edit.mean_preserve_psnr_db},
                           {"preserve_exact_count", report.edit.preserve_exact_count},
                           {"psnr_pair_count", report.edit.psnr_pair_count}};
    }
    metrics["temporal"] = json::array();
    for (const TemporalEval& t : report.temporal)
        metrics["temporal"].push_back({{"frames", t.frames},
                                       {"mean_adjacent_mse", t.mean_adjacent_mse},
                                       {"per_video", t.adjacent_mse}});
    metrics["loss_curve"] = report.loss_curve;
    metrics["loss_initial_window"] = report.loss_initial_window;
    metrics["loss_final_window"] = report.loss_final_window;
    metrics["scalars"] = report.scalars;
    root["metrics"] = std::move(metrics);

    root["per_sample"] = json::array();
    for (std::size_t i = 0; i < report.edit.edit_mse.size(); ++i)
        root["per_sample"].push_back(per_sample_entry(report.edit, i));

    return root.dump(2) + "\n";
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
    const std::string text = report_json(report);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string per_sample_csv(const EditEval& eval) {
    std::string out = "index,edit_mse,preserve_mse,preserve_defined,preserve_exact,preserve_psnr_db\n";
    for (std::size_t i = 0; i < eval.edit_mse.size(); ++i) {
        out += std::to_string(i) + "," + fmt_double(eval.edit_mse[i]) + ",";
        if (eval.preserve_defined[i]) out += fmt_double(eval.preserve_mse[i]);
        out += ",";
        out += eval.preserve_defined[i] ? "1" : "0";
        out += ",";
        out += eval.preserve_exact[i] ? "1" : "0";
        out += ",";
        if (!eval.preserve_defined[i]) {
            // leave the column empty
        } else if (eval.preserve_exact[i]) {
            out += "exact";
        } else {
            out += fmt_double(psnr_db(eval.preserve_mse[i]));
        }
        out += "\n";
    }
    return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.shape[0] != 3)
        throw ShapeMismatch("write_ppm wants a [3,H,W] image, got " + shape_str(image.shape));
    const std::size_t h = image.shape[1], w = image.shape[2], hw = h * w;
    std::string body = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    body.reserve(body.size() + 3 * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(static_cast<double>(image.data[c * hw + p]), 0.0, 1.0);
            body.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace ive
