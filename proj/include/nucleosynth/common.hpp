// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nucleo {

inline uint64_t fnv1a_init() { return 1469598103934665603ULL; }

inline uint64_t fnv1a_bytes(uint64_t h, const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a_file(const std::string& path);

/// Worker count: min(hardware, NUCLEOSYNTH_THREADS when set). Always >= 1.
int worker_count();

/// Runs fn(i) for i in [0, n) on the worker pool. Blocks until done.
/// Work is split into contiguous chunks; any cross-item reduction has to be
/// performed by the caller afterwards in index order.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace nucleo
