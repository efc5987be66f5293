#pragma once

#include <filesystem>

#include "gradsup/model.hpp"

namespace gradsup {

// JSON checkpoint with shapes, seed, activation tag, and raw weight arrays.
// Doubles are written in shortest round-trip form, so load(save(m)) == m
// bit-for-bit. Load errors name the offending file.
void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace gradsup
