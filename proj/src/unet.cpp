// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/unet.hpp"

namespace nucleo {

void UNetConfig::validate() const {
    if (mult.empty()) throw std::invalid_argument("UNetConfig: mult must be nonempty");
    if (blocks < 1) throw std::invalid_argument("UNetConfig: blocks must be >= 1");
    if (emb_width % 2 != 0) throw std::invalid_argument("UNetConfig: emb_width must be even");
    if (width < 1 || in_ch < 1 || out_ch < 1)
        throw std::invalid_argument("UNetConfig: channel counts must be positive");
    int64_t div = int64_t(1) << depth();
    if (h % div != 0 || w % div != 0)
        throw std::invalid_argument("UNetConfig: spatial extents not divisible by 2^depth");
}

}  // namespace nucleo
