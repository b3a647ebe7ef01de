#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdi/tensor.hpp"

namespace kdi {

// Binary P5 PGM, maxval 255: linear min->0 / max->255 scaling with
// round-half-up quantization; constant inputs render all zeros. Accepts
// [H,W] or [1,H,W] maps.
std::vector<std::uint8_t> pgm_bytes(const Tensor& map);
void write_pgm(const std::string& path, const Tensor& map);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace kdi
