#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "alignlab/tensor.hpp"

namespace alignlab {

/// Named arrays stored as `<stem>.bin` (magic "ALIGNLAB", u64 element count,
/// little-endian f64 payload) plus `<stem>.json` listing each array's shape
/// and offset into the payload. Arrays are row-major.
using ArrayBundle = std::map<std::string, Tensor>;

void save_bundle(const std::filesystem::path& stem, const ArrayBundle& arrays);
ArrayBundle load_bundle(const std::filesystem::path& stem);

}  // namespace alignlab
