#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "ive/dataset_io.hpp"
#include "ive/errors.hpp"
#include "ive/synth.hpp"

using namespace ive;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ive_io_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE_BEGIN("dataset_io");

TEST_CASE("crc32 matches the standard check value") {
    // The canonical CRC-32 test vector.
    const char msg[] = "123456789";
    CHECK(crc32_bytes(msg, 9) == 0xCBF43926u);
    CHECK(crc32_bytes(msg, 0) == 0u);
}

TEST_CASE("empty datasets round-trip") {
    const fs::path dir = fresh_dir("empty");
    write_edit_dataset(dir, {});
    CHECK(read_edit_dataset(dir).empty());
    CHECK(fs::file_size(dir / "data.bin") == 0);

    const fs::path vdir = fresh_dir("empty_video");
    write_video_dataset(vdir, {});
    CHECK(read_video_dataset(vdir).empty());
    fs::remove_all(dir);
    fs::remove_all(vdir);
}

TEST_CASE("a hundred-sample corpus round-trips bitwise") {
    const fs::path dir = fresh_dir("pairs");
    const auto corpus = make_edit_dataset(100, 21);
    write_edit_dataset(dir, corpus);
    const auto loaded = read_edit_dataset(dir);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(loaded[i] == corpus[i]);
    // no leftover temporaries from the atomic write
    CHECK(!fs::exists(dir / "data.bin.tmp"));
    CHECK(!fs::exists(dir / "manifest.json.tmp"));
    fs::remove_all(dir);
}

TEST_CASE("video clips round-trip bitwise") {
    const fs::path dir = fresh_dir("clips");
    const auto clips = make_video_dataset(30, 8, 22);
    write_video_dataset(dir, clips);
    const auto loaded = read_video_dataset(dir);
    REQUIRE(loaded.size() == clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) CHECK(loaded[i] == clips[i]);
    fs::remove_all(dir);
}

TEST_CASE("manifest offsets match byte-level recomputation") {
    const fs::path dir = fresh_dir("offsets");
    const auto corpus = make_edit_dataset(7, 23);
    write_edit_dataset(dir, corpus);

    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    const std::string blob = slurp(dir / "data.bin");
    CHECK(manifest.at("version") == 1);
    CHECK(manifest.at("kind") == "edit_pairs");
    CHECK(manifest.at("count") == 7);

    // images are [3,16,16] -> 3072 bytes; masks [1,16,16] -> 1024 bytes
    std::size_t cursor = 0;
    for (const auto& rec : manifest.at("samples")) {
        for (const char* field : {"src", "edit", "mask"}) {
            const auto& ref = rec.at(field);
            const auto offset = ref.at("offset").get<std::size_t>();
            const auto length = ref.at("length").get<std::size_t>();
            CHECK(offset == cursor);
            CHECK(length == (std::string(field) == "mask" ? 1024u : 3072u));
            CHECK(ref.at("crc32").get<std::uint32_t>() ==
                  crc32_bytes(blob.data() + offset, length));
            cursor += length;
        }
    }
    CHECK(cursor == blob.size());

    // the first stored float is sample 0's first red pixel, little-endian
    float first = 0.0f;
    std::memcpy(&first, blob.data(), 4);
    CHECK(first == corpus[0].src_image.data[0]);
    fs::remove_all(dir);
}

TEST_CASE("corrupt manifests are rejected") {
    const fs::path dir = fresh_dir("corrupt");
    write_edit_dataset(dir, make_edit_dataset(3, 24));

    const std::string good = slurp(dir / "manifest.json");

    dump(dir / "manifest.json", "this is not json");
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    auto wrong_kind = nlohmann::json::parse(good);
    wrong_kind["kind"] = "video_clips";
    dump(dir / "manifest.json", wrong_kind.dump());
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    auto wrong_version = nlohmann::json::parse(good);
    wrong_version["version"] = 99;
    dump(dir / "manifest.json", wrong_version.dump());
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    auto wrong_count = nlohmann::json::parse(good);
    wrong_count["count"] = 5;
    dump(dir / "manifest.json", wrong_count.dump());
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    auto missing_field = nlohmann::json::parse(good);
    missing_field["samples"][0].erase("src_prompt");
    dump(dir / "manifest.json", missing_field.dump());
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    auto bad_length = nlohmann::json::parse(good);
    bad_length["samples"][0]["src"]["length"] = 100;  // disagrees with shape
    dump(dir / "manifest.json", bad_length.dump());
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);

    fs::remove_all(dir);
    CHECK_THROWS_AS(read_edit_dataset(dir), CorruptManifest);  // missing entirely
}

TEST_CASE("truncated blobs are detected") {
    const fs::path dir = fresh_dir("truncated");
    write_edit_dataset(dir, make_edit_dataset(3, 25));
    const std::string blob = slurp(dir / "data.bin");
    dump(dir / "data.bin", blob.substr(0, blob.size() - 10));
    CHECK_THROWS_AS(read_edit_dataset(dir), TruncatedBlob);
    fs::remove_all(dir);
}

TEST_CASE("bit flips are detected by the checksums") {
    const fs::path dir = fresh_dir("bitflip");
    write_edit_dataset(dir, make_edit_dataset(3, 26));
    std::string blob = slurp(dir / "data.bin");
    blob[blob.size() / 2] = static_cast<char>(blob[blob.size() / 2] ^ 0x40);
    dump(dir / "data.bin", blob);
    CHECK_THROWS_AS(read_edit_dataset(dir), ChecksumMismatch);
    fs::remove_all(dir);
}

TEST_SUITE_END();
