#pragma once

#include <string>

#include "omnicd/model.hpp"

namespace omnicd {

/// Binary checkpoint: magic, uint64 header length, JSON header (config plus a
/// tensor directory), then raw little-endian doubles. Loading rebuilds the
/// model from the stored config and fails on any missing or mis-shaped tensor.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace omnicd
