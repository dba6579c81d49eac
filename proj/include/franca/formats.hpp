#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "franca/image_io.hpp"
#include "franca/tensor.hpp"

namespace franca {

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

// "FRNK", version u32, ndims u32, dims u32 x ndims, little-endian float32 payload.
void write_feature_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_feature_file(const std::filesystem::path& path);

using NamedTensors = std::map<std::string, Tensor>;

// "FRCK", version u32, tensor count u32, then per tensor: name length u16,
// name bytes, ndims u32, dims u32 x ndims, little-endian float32 payload.
// Entries are written in name order.
void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

// Writes to "<path>.tmp" then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace franca
