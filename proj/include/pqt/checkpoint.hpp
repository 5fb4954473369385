#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pqt/model.hpp"

namespace pqt {

// Little-endian binary checkpoint: magic, format version, classifier
// config, then a manifest of named tensors with dims followed by their
// float64 payload. Round-trips bit-exactly.
std::vector<uint8_t> save_checkpoint(const ConvNet& net);
ConvNet load_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint_file(const ConvNet& net, const std::string& path);
ConvNet load_checkpoint_file(const std::string& path);

} // namespace pqt
