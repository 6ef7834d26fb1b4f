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

#include "ive/checkpoint.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "ive/errors.hpp"

namespace ive {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'I', 'V', 'E', '1'};
constexpr int kFormatVersion = 1;

std::uint32_t crc_of(const Tensor<float>& t) {
    return static_cast<std::uint32_t>(::crc32(
        0L, reinterpret_cast<const Bytef*>(t.data.data()), static_cast<uInt>(t.data.size() * 4)));
}

json config_to_json_obj(const TrainConfig& c) {
    return {{"phase", to_string(c.phase)},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"steps", c.steps},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"seed", c.seed},
            {"ablation", to_string(c.ablation)},
            {"log_every", c.log_every},
            {"checkpoint_path", c.checkpoint_path},
            {"model",
             {{"image_size", c.model.image_size},
              {"channels", c.model.channels},
              {"patch", c.model.patch},
              {"frames_max", c.model.frames_max},
              {"d_model", c.model.d_model},
              {"heads", c.model.heads},
              {"blocks", c.model.blocks},
              {"vocab", c.model.vocab},
              {"prompt_len", c.model.prompt_len}}}};
}

TrainConfig config_from_json_obj(const json& j) {
    TrainConfig c;
    c.phase = parse_phase(j.at("phase").get<std::string>());
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.steps = j.at("steps").get<std::size_t>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.ablation = parse_mode(j.at("ablation").get<std::string>());
    c.log_every = j.at("log_every").get<std::size_t>();
    c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    const json& m = j.at("model");
    c.model.image_size = m.at("image_size").get<std::size_t>();
    c.model.channels = m.at("channels").get<std::size_t>();
    c.model.patch = m.at("patch").get<std::size_t>();
    c.model.frames_max = m.at("frames_max").get<std::size_t>();
    c.model.d_model = m.at("d_model").get<std::size_t>();
    c.model.heads = m.at("heads").get<std::size_t>();
    c.model.blocks = m.at("blocks").get<std::size_t>();
    c.model.vocab = m.at("vocab").get<std::size_t>();
    c.model.prompt_len = m.at("prompt_len").get<std::size_t>();
    return c;
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::string to_string(TrainPhase phase) {
    return phase == TrainPhase::Pretrain ? "pretrain" : "edit";
}

TrainPhase parse_phase(const std::string& name) {
    if (name == "pretrain") return TrainPhase::Pretrain;
    if (name == "edit") return TrainPhase::EditTrain;
    throw DomainError("parse_phase: unknown phase '" + name + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0)) throw DomainError("TrainConfig: learning rate must not be negative");
    if (batch_size < 1) throw DomainError("TrainConfig: batch size must be at least 1");
    if (phase == TrainPhase::EditTrain && epochs < 1)
        throw DomainError("TrainConfig: need at least one epoch");
    if (phase == TrainPhase::Pretrain && steps < 1)
        throw DomainError("TrainConfig: need at least one step");
    if (log_every < 1) throw DomainError("TrainConfig: log_every must be at least 1");
    model.validate();
}

std::string train_config_to_json(const TrainConfig& cfg) {
    return config_to_json_obj(cfg).dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
    try {
        return config_from_json_obj(json::parse(text));
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("train config: ") + e.what());
    }
}

std::string config_digest(const TrainConfig& cfg) {
    // nlohmann objects iterate in sorted key order, so dump() is canonical.
    const std::string text = config_to_json_obj(cfg).dump();
    return sha256_hex(text.data(), text.size());
}

void adam_step(ParamStore<float>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Tensor<float>& p = params.at(name);
        if (p.shape != g.shape)
            throw ShapeMismatch("adam_step: " + name + " is " + shape_str(p.shape) +
                                " but its gradient is " + shape_str(g.shape));
        auto [mit, m_fresh] = state.m.try_emplace(name, Tensor<float>::zeros(p.shape));
        auto [vit, v_fresh] = state.v.try_emplace(name, Tensor<float>::zeros(p.shape));
        (void)m_fresh;
        (void)v_fresh;
        Tensor<float>& m = mit->second;
        Tensor<float>& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            const double mi = beta1 * static_cast<double>(m.data[i]) + (1.0 - beta1) * gi;
            const double vi = beta2 * static_cast<double>(v.data[i]) + (1.0 - beta2) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = static_cast<double>(m.data[i]) / c1;
            const double vhat = static_cast<double>(v.data[i]) / c2;
            p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) -
                                           lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    // Directory: parameters first (name order), then moments (name order).
    json dir = json::array();
    std::string blob;
    const auto add = [&](const std::string& name, const Tensor<float>& t, const char* role,
                         bool frozen) {
        dir.push_back({{"name", name},
                       {"role", role},
                       {"shape", t.shape},
                       {"offset", blob.size()},
                       {"length", t.data.size() * 4},
                       {"crc32", crc_of(t)},
                       {"frozen", frozen}});
        blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * 4);
    };
    for (const auto& name : ckpt.params.names())
        add(name, ckpt.params.at(name), "param", ckpt.params.is_frozen(name));
    for (const auto& [name, t] : ckpt.opt.m) add(name, t, "adam_m", false);
    for (const auto& [name, t] : ckpt.opt.v) add(name, t, "adam_v", false);

    const json header = {{"version", kFormatVersion},
                         {"config", config_to_json_obj(ckpt.config)},
                         {"step", ckpt.step},
                         {"adam_t", ckpt.opt.t},
                         {"tensors", std::move(dir)}};
    const std::string htext = header.dump();

    std::string bytes;
    bytes.append(kMagic, 4);
    const std::uint64_t hlen = htext.size();
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((hlen >> (8 * i)) & 0xff));
    bytes += htext;
    bytes += blob;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    atomic_write(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptManifest("cannot open " + path.string());
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CorruptManifest(path.string() + ": bad magic");
    std::uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i)
        hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
    if (12 + hlen > bytes.size()) throw CorruptManifest(path.string() + ": header overruns file");

    json header;
    try {
        header = json::parse(bytes.substr(12, hlen));
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    const std::size_t blob_base = 12 + hlen;
    try {
        if (header.at("version").get<int>() != kFormatVersion)
            throw CorruptManifest("unsupported checkpoint version");
        ckpt.config = config_from_json_obj(header.at("config"));
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.opt.t = header.at("adam_t").get<std::uint64_t>();
        for (const auto& rec : header.at("tensors")) {
            const auto name = rec.at("name").get<std::string>();
            const auto role = rec.at("role").get<std::string>();
            const Shape shape = rec.at("shape").get<Shape>();
            const auto offset = rec.at("offset").get<std::size_t>();
            const auto length = rec.at("length").get<std::size_t>();
            Tensor<float> t(shape);
            if (t.data.size() * 4 != length)
                throw CorruptManifest("tensor '" + name + "' length disagrees with its shape");
            if (blob_base + offset + length > bytes.size())
                throw TruncatedBlob("tensor '" + name + "' overruns the checkpoint file");
            std::memcpy(t.data.data(), bytes.data() + blob_base + offset, length);
            if (crc_of(t) != rec.at("crc32").get<std::uint32_t>())
                throw ChecksumMismatch("tensor '" + name + "'");
            if (role == "param")
                ckpt.params.add(name, std::move(t), rec.at("frozen").get<bool>());
            else if (role == "adam_m")
                ckpt.opt.m.emplace(name, std::move(t));
            else if (role == "adam_v")
                ckpt.opt.v.emplace(name, std::move(t));
            else
                throw CorruptManifest("unknown tensor role '" + role + "'");
        }
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("checkpoint header: ") + e.what());
    }
    return ckpt;
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
    std::string acc = "config=" + config_digest(ckpt.config) + "\n";
    acc += "step=" + std::to_string(ckpt.step) + "\n";
    acc += "adam_t=" + std::to_string(ckpt.opt.t) + "\n";
    acc += "params=" + store_digest(ckpt.params) + "\n";
    for (const auto& [name, t] : ckpt.opt.m) acc += "m:" + name + "=" + tensor_digest(t) + "\n";
    for (const auto& [name, t] : ckpt.opt.v) acc += "v:" + name + "=" + tensor_digest(t) + "\n";
    for (const auto& name : ckpt.params.frozen_names()) acc += "frozen:" + name + "\n";
    return sha256_hex(acc.data(), acc.size());
}

}  // namespace ive
