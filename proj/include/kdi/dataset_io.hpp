#pragma once

#include <string>

#include "kdi/synth.hpp"

namespace kdi {

// KDS1 little-endian layout: magic "KDS1" | version u32=1 | n u32 | H u32 |
// W u32 | channels u32=1 | flags u32 (bit0: masks present) | per sample:
// label u16 | image H*W f32 | mask H*W u8 (when flagged).
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

void write_catalog(const std::string& path, const ClassCatalog& catalog);
ClassCatalog read_catalog(const std::string& path);

}  // namespace kdi
