#pragma once

#include <filesystem>

#include "proker/spectral.hpp"

namespace proker {

// PKM1 container, little-endian:
//   "PKM1" | u32 json_len | JSON header | u32 block_count |
//   block_count x ( u32 name_len | name | u64 size | FSF v1 bytes )
// A fitted ProKeR model holds blocks support / gamma / text; a compressed
// prototype model holds prototypes / frequencies / phases / text.
// Matrices go through FSF and are therefore stored as f32.

std::vector<std::uint8_t> encode_proker_model(const ProKeRModel& model);
ProKeRModel decode_proker_model(const std::vector<std::uint8_t>& bytes);
void save_proker_model(const ProKeRModel& model, const std::filesystem::path& path);
ProKeRModel load_proker_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_prototype_model(const PrototypeModel& model);
PrototypeModel decode_prototype_model(const std::vector<std::uint8_t>& bytes);
void save_prototype_model(const PrototypeModel& model, const std::filesystem::path& path);
PrototypeModel load_prototype_model(const std::filesystem::path& path);

/// Count of stored model numbers, excluding the feature map:
/// N*K + N*(K+1)*D for a cached model, N*(D+R) for prototypes.
std::size_t stored_numbers(const ProKeRModel& model);
std::size_t stored_numbers(const PrototypeModel& model);

/// Header summary of an FSF or PKM1 file. Throws BadMagic otherwise.
nlohmann::json inspect_file(const std::filesystem::path& path);

}  // namespace proker
