#pragma once

#include <string>

#include "vdyn/net.hpp"

namespace vdyn {

// Parameter file layout (little-endian):
//   magic "VDNW" | u32 version | u32 descriptor length | descriptor bytes |
//   u64 parameter count | f32 values in visit_params order | u64 FNV-1a
//   checksum of all preceding bytes.
// Values are stored in single precision; loading widens exactly, so
// save -> load -> save is byte-stable.

/// Write a network's parameters. Throws DataError on IO failure.
void save_params(const InitializedLstm& net, const std::string& path);

/// Read a parameter file. Throws DataError on a missing file, bad magic,
/// truncation, checksum mismatch, or count mismatch.
InitializedLstm load_params(const std::string& path);

/// Same, but also require the stored descriptor to equal `expected`.
InitializedLstm load_params(const std::string& path, const NetArch& expected);

}  // namespace vdyn
