#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "auxmtl/scenegen.hpp"

namespace auxmtl::dataset_io {

// Per-sample binary container, documented in docs/dataset_format.md:
//   magic "SMT1", u32 field count, then per field
//   u32 name length, name bytes, u32 rank, rank x u32 dims, f32 payload.
// All integers and floats little-endian. Masks are stored as f32 class ids.
void write_sample_file(const std::filesystem::path& path, const scenegen::Sample& s);
scenegen::Sample read_sample_file(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<scenegen::ManifestEntry>& entries);
std::vector<scenegen::ManifestEntry> read_manifest(const std::filesystem::path& path);

// Renders n samples into out_dir/samples/ and writes out_dir/manifest.jsonl.
// Returns the manifest. Purely deterministic in (seed, dist).
std::vector<scenegen::ManifestEntry> generate_dataset(std::int64_t n, std::uint64_t seed,
                                                      const scenegen::LabelDist& dist,
                                                      const std::filesystem::path& out_dir);

void write_id_list(const std::filesystem::path& path, const std::vector<std::int64_t>& ids);
std::vector<std::int64_t> read_id_list(const std::filesystem::path& path);

// In-memory dataset view used by the trainer: samples loaded for a given
// id list, in id-list order.
std::vector<scenegen::Sample> load_samples(const std::filesystem::path& data_dir,
                                           const std::vector<scenegen::ManifestEntry>& manifest,
                                           const std::vector<std::int64_t>& ids);

}  // namespace auxmtl::dataset_io
