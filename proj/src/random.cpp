// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nucleo {

namespace {

// splitmix64 finalizer; full-period 64-bit mixer.
uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

RandomStream RandomStream::child(uint64_t label) const {
    RandomStream c;
    c.seed = mix64(seed ^ mix64(label ^ 0xa0761d6478bd642fULL));
    c.counter = 0;
    return c;
}

RandomStream RandomStream::child(const std::string& label) const {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : label) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return child(h);
}

uint64_t RandomStream::next_u64() { return mix64(seed ^ mix64(counter++)); }

double RandomStream::next_uniform() {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::next_normal() {
    // Box-Muller; u1 nudged away from 0 so log stays finite.
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t RandomStream::next_below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("RandomStream::next_below: n == 0");
    // Multiply-shift; bias is negligible for the toy-scale n used here and
    // the mapping stays platform-independent.
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

Field RandomStream::draw_normal(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("draw_normal: empty shape");
    Field f(shape);
    for (auto& v : f.data) v = static_cast<float>(next_normal());
    return f;
}

Field RandomStream::draw_uniform(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("draw_uniform: empty shape");
    Field f(shape);
    for (auto& v : f.data) v = static_cast<float>(next_uniform());
    return f;
}

int RandomStream::draw_categorical(const float* probs, int k) {
    if (k <= 0) throw std::invalid_argument("draw_categorical: empty row");
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        if (probs[i] < 0.0f) throw std::invalid_argument("draw_categorical: negative probability");
        sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("draw_categorical: probabilities sum to " + std::to_string(sum));
    double u = next_uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return k - 1;
}

int RandomStream::draw_categorical(const Field& probs) {
    return draw_categorical(probs.data.data(), static_cast<int>(probs.numel()));
}

}  // namespace nucleo
