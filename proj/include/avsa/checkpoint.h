#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avsa/tensor.h"

namespace avsa {

// "AVSA" container: magic, u32 version, then entries of
// (u32 name length, utf8 name, u32 rank, u32 dims[rank], f32 data), all
// little-endian, until end of file.
inline constexpr char kCheckpointMagic[4] = {'A', 'V', 'S', 'A'};
inline constexpr uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor>;

std::string serialize_checkpoint(const std::vector<ConstNamedTensor>& entries);
TensorMap deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const std::vector<ConstNamedTensor>& entries);
TensorMap load_checkpoint(const std::string& path);

// Copies a named entry into `dst`, checking the shape. Throws DataError.
void take_tensor(const TensorMap& map, const std::string& name, Tensor& dst);

}  // namespace avsa
