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
#include <vector>

#include "ive/synth.hpp"

namespace ive {

/// On-disk dataset layout: `manifest.json` describing every sample plus
/// `data.bin`, the concatenation of all tensors as little-endian 32-bit
/// floats in record order. Each blob carries offset, byte length, shape,
/// and a CRC32 in the manifest. Writes go through temporary files renamed
/// into place, so readers never observe a half-written dataset.
///
/// Read errors: CorruptManifest (unparseable/incomplete manifest),
/// TruncatedBlob (blob range beyond the data file), ChecksumMismatch.

std::uint32_t crc32_bytes(const void* data, std::size_t len);

void write_edit_dataset(const std::filesystem::path& dir,
                        const std::vector<EditPairSample>& samples);
std::vector<EditPairSample> read_edit_dataset(const std::filesystem::path& dir);

void write_video_dataset(const std::filesystem::path& dir, const std::vector<VideoClip>& clips);
std::vector<VideoClip> read_video_dataset(const std::filesystem::path& dir);

}  // namespace ive
