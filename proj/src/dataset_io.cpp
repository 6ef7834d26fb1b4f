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

#include "ive/dataset_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>

#include "json.hpp"

#include "ive/errors.hpp"

namespace ive {

namespace {

using nlohmann::json;

constexpr int kManifestVersion = 1;

/// Appends a tensor's raw float bytes to the blob and returns its manifest
/// record. The byte order is the host's; the format is defined as
/// little-endian and this code targets little-endian platforms.
json append_blob(std::string& blob, const Tensor<float>& t) {
    static_assert(sizeof(float) == 4);
    const std::size_t offset = blob.size();
    const std::size_t length = t.data.size() * sizeof(float);
    blob.append(reinterpret_cast<const char*>(t.data.data()), length);
    return {{"offset", offset},
            {"length", length},
            {"shape", t.shape},
            {"crc32", crc32_bytes(t.data.data(), length)}};
}

Tensor<float> extract_blob(const std::string& blob, const json& ref) {
    const auto offset = ref.at("offset").get<std::size_t>();
    const auto length = ref.at("length").get<std::size_t>();
    const Shape shape = ref.at("shape").get<Shape>();
    if (offset + length > blob.size() || offset + length < offset)
        throw TruncatedBlob("blob [" + std::to_string(offset) + ", +" + std::to_string(length) +
                            ") exceeds data file of " + std::to_string(blob.size()) + " bytes");
    Tensor<float> t(shape);
    if (t.data.size() * sizeof(float) != length)
        throw CorruptManifest("blob length disagrees with its shape");
    if (crc32_bytes(blob.data() + offset, length) != ref.at("crc32").get<std::uint32_t>())
        throw ChecksumMismatch("blob at offset " + std::to_string(offset));
    std::memcpy(t.data.data(), blob.data() + offset, length);
    return t;
}

json scene_to_json(const SceneSpec& s) {
    json objs = json::array();
    for (const auto& o : s.objects)
        objs.push_back({{"color", o.color}, {"shape", o.shape}, {"pos", o.pos}});
    return {{"env", s.env}, {"objects", objs}, {"style", s.style}, {"seed", s.seed}};
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    s.env = j.at("env").get<int>();
    s.style = j.at("style").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("objects"))
        s.objects.push_back(
            {o.at("color").get<int>(), o.at("shape").get<int>(), o.at("pos").get<int>()});
    return s;
}

json task_to_json(const EditTask& t) {
    return {{"kind", to_string(t.kind)},
            {"object_index", t.object_index},
            {"new_color", t.new_color},
            {"new_object",
             {{"color", t.new_object.color},
              {"shape", t.new_object.shape},
              {"pos", t.new_object.pos}}},
            {"new_env", t.new_env},
            {"style", t.style}};
}

EditTask task_from_json(const json& j) {
    EditTask t;
    t.kind = parse_edit_kind(j.at("kind").get<std::string>());
    t.object_index = j.at("object_index").get<int>();
    t.new_color = j.at("new_color").get<int>();
    const auto& o = j.at("new_object");
    t.new_object = {o.at("color").get<int>(), o.at("shape").get<int>(), o.at("pos").get<int>()};
    t.new_env = j.at("new_env").get<int>();
    t.style = j.at("style").get<int>();
    return t;
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

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptManifest("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Parses + validates the common envelope; returns the manifest JSON.
json load_manifest(const std::filesystem::path& dir, const std::string& kind) {
    json m;
    try {
        m = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("manifest.json: ") + e.what());
    }
    try {
        if (m.at("version").get<int>() != kManifestVersion)
            throw CorruptManifest("unsupported manifest version");
        if (m.at("kind").get<std::string>() != kind)
            throw CorruptManifest("manifest kind is '" + m.at("kind").get<std::string>() +
                                  "', expected '" + kind + "'");
        if (m.at("count").get<std::size_t>() != m.at("samples").size())
            throw CorruptManifest("sample count disagrees with record list");
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("manifest.json: ") + e.what());
    }
    return m;
}

void write_dataset(const std::filesystem::path& dir, const std::string& kind, json samples,
                   std::string blob) {
    std::filesystem::create_directories(dir);
    const json manifest = {{"version", kManifestVersion},
                           {"kind", kind},
                           {"count", samples.size()},
                           {"samples", std::move(samples)}};
    atomic_write(dir / "data.bin", blob);
    atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

std::uint32_t crc32_bytes(const void* data, std::size_t len) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

void write_edit_dataset(const std::filesystem::path& dir,
                        const std::vector<EditPairSample>& samples) {
    std::string blob;
    json records = json::array();
    for (const auto& s : samples) {
        json rec;
        rec["src"] = append_blob(blob, s.src_image);
        rec["edit"] = append_blob(blob, s.edit_image);
        rec["mask"] = append_blob(blob, s.edit_mask);
        rec["src_prompt"] = s.src_prompt;
        rec["edit_prompt"] = s.edit_prompt;
        rec["scene"] = scene_to_json(s.scene);
        rec["task"] = task_to_json(s.task);
        records.push_back(std::move(rec));
    }
    write_dataset(dir, "edit_pairs", std::move(records), std::move(blob));
}

std::vector<EditPairSample> read_edit_dataset(const std::filesystem::path& dir) {
    const json m = load_manifest(dir, "edit_pairs");
    const std::string blob = read_file(dir / "data.bin");
    std::vector<EditPairSample> out;
    try {
        for (const auto& rec : m.at("samples")) {
            EditPairSample s;
            s.src_image = extract_blob(blob, rec.at("src"));
            s.edit_image = extract_blob(blob, rec.at("edit"));
            s.edit_mask = extract_blob(blob, rec.at("mask"));
            s.src_prompt = rec.at("src_prompt").get<std::vector<std::int64_t>>();
            s.edit_prompt = rec.at("edit_prompt").get<std::vector<std::int64_t>>();
            s.scene = scene_from_json(rec.at("scene"));
            s.task = task_from_json(rec.at("task"));
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("manifest.json: ") + e.what());
    }
    return out;
}

void write_video_dataset(const std::filesystem::path& dir, const std::vector<VideoClip>& clips) {
    std::string blob;
    json records = json::array();
    for (const auto& c : clips) {
        json rec;
        rec["frames"] = append_blob(blob, c.frames);
        rec["caption"] = c.caption;
        rec["mover"] = c.mover;
        rec["vy"] = c.vy;
        rec["vx"] = c.vx;
        records.push_back(std::move(rec));
    }
    write_dataset(dir, "video_clips", std::move(records), std::move(blob));
}

std::vector<VideoClip> read_video_dataset(const std::filesystem::path& dir) {
    const json m = load_manifest(dir, "video_clips");
    const std::string blob = read_file(dir / "data.bin");
    std::vector<VideoClip> out;
    try {
        for (const auto& rec : m.at("samples")) {
            VideoClip c;
            c.frames = extract_blob(blob, rec.at("frames"));
            c.caption = rec.at("caption").get<std::vector<std::int64_t>>();
            c.mover = rec.at("mover").get<int>();
            c.vy = rec.at("vy").get<int>();
            c.vx = rec.at("vx").get<int>();
            out.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw CorruptManifest(std::string("manifest.json: ") + e.what());
    }
    return out;
}

}  // namespace ive
