#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hepi/tensor.hpp"

namespace hepi {

// Tensor container file: magic "HEPI", u32 version, u32 record count, then per
// record: u32 name length, name bytes, u8 dtype (0=f64, 1=f32), u32 rank,
// u64 dims, raw little-endian payload. Bad magic, unknown version, or a short
// read raise NumericsError.
constexpr uint32_t kCheckpointVersion = 1;

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items,
                  bool as_f32 = false);

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

}  // namespace hepi
