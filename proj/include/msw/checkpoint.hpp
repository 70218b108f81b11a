#pragma once

#include <string>
#include <vector>

#include "msw/tensor.hpp"

namespace msw {

/// Little-endian binary tensor container. Layout:
///   magic "MSWT", u32 version (currently 1), then one record per tensor:
///   u32 name length, name bytes, u32 rank, u64 extents[rank],
///   f64 data (row-major). Records run to end of file.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<ad::Tensor>& tensors);

/// Throws std::runtime_error on bad magic, unsupported version or a
/// truncated payload.
std::vector<ad::Tensor> load_checkpoint(const std::string& path);

/// First tensor with the given name, or an undefined handle.
ad::Tensor find_tensor(const std::vector<ad::Tensor>& tensors,
                       const std::string& name);

}  // namespace msw
