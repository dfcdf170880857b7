// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nucleo {

struct PngImage {
    int64_t h = 0, w = 0;
    int channels = 0;   // 1 or 3
    int bit_depth = 0;  // 8 or 16
    std::vector<uint16_t> px;  // row-major, 8-bit values stored widened
};

void write_png_rgb8(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& rgb);
void write_png_gray8(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& g);
void write_png_gray16(const std::string& path, int64_t h, int64_t w, const std::vector<uint16_t>& g);

PngImage read_png(const std::string& path);

}  // namespace nucleo
