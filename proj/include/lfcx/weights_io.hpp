#pragma once

// Weights container, little-endian:
//   "LFCX" | u32 version | u32 count |
//   count x { u16 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 rank |
//             rank x u32 extent | f32 payload }
// Values are narrowed to f32 on save and widened to f64 on load.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lfcx/param_store.hpp"
#include "lfcx/tensor.hpp"

namespace lfcx {

inline constexpr std::uint32_t kWeightsVersion = 1;

using WeightMap = std::map<std::string, Tensor>;

std::vector<std::uint8_t> encode_weights(const WeightMap& entries);
// Throws IoError on truncation, trailing bytes, bad magic/version/dtype.
WeightMap decode_weights(const std::vector<std::uint8_t>& bytes);

void save_weights(const std::filesystem::path& path, const ParamStore& store);
WeightMap read_weights(const std::filesystem::path& path);

// Copies every entry into the store. Unknown names, shape mismatches and
// store tensors without an entry are errors, except for store tensors under
// one of `optional_prefixes`, which keep their current values.
void apply_weights(ParamStore& store, const WeightMap& entries,
                   const std::vector<std::string>& optional_prefixes = {});

}  // namespace lfcx
