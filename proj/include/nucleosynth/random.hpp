// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nucleosynth/field.hpp"

namespace nucleo {

/// Counter-based deterministic random stream. A draw is a pure function of
/// (seed, counter), so identical states replay identical sequences on any
/// platform and child streams are independent of parent advancement.
struct RandomStream {
    uint64_t seed = 0;
    uint64_t counter = 0;

    RandomStream() = default;
    explicit RandomStream(uint64_t s) : seed(s) {}

    /// Independent stream derived from (seed, label); does not advance *this.
    RandomStream child(uint64_t label) const;
    RandomStream child(const std::string& label) const;

    uint64_t next_u64();
    /// Uniform in [0, 1).
    double next_uniform();
    /// Standard normal (Box-Muller, fixed two-draw form).
    double next_normal();
    /// Uniform integer in [0, n).
    uint64_t next_below(uint64_t n);

    Field draw_normal(const std::vector<int64_t>& shape);
    Field draw_uniform(const std::vector<int64_t>& shape);
    /// Index drawn from a probability row; rows must be non-negative and
    /// sum to 1 within 1e-6.
    int draw_categorical(const float* probs, int k);
    int draw_categorical(const Field& probs);
};

}  // namespace nucleo
