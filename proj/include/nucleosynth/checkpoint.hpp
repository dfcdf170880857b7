// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "nucleosynth/field.hpp"

namespace nucleo {

/// Named-tensor table plus a free-form JSON metadata record. Save/load
/// roundtrips are bit-exact per tensor.
struct Checkpoint {
    std::map<std::string, Field> tensors;
    nlohmann::json metadata = nlohmann::json::object();
};

/// NSCK v1 container: magic "NSCK", u32 version, u32 tensor count; per
/// tensor u16 name length + name, u8 dtype (0 = f32), u8 rank, rank x u64
/// extents, little-endian row-major payload; trailing u32 + JSON metadata.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nucleo
