// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <vector>

#include "nucleosynth/field.hpp"

namespace nucleo {

/// Channel 0: foreground scaled to {-1,+1}; channels 1-2: horizontal /
/// vertical within-instance offsets normalized to [-1,1], 0 on background.
using StructureMap = Field;  // [H,W,3]

/// Offsets are (coordinate - instance centroid) / max |offset| per axis
/// (divisor 1 for degenerate axes), clamped to [-1,1].
StructureMap make_structure_map(const LabelGrid& label, const InstanceGrid& instance);

/// 1 iff id > 0 and a 4-neighbor (or the image border) has a different id.
Field instance_edge_map(const InstanceGrid& instance);

/// c_s layout [H,W,K+3]: K one-hot semantic channels, 2 offset channels,
/// 1 instance-edge channel.
Field assemble_semantic_condition(const LabelGrid& label, const InstanceGrid& instance, int k);

struct ExtractResult {
    InstanceGrid instances;
    std::map<uint16_t, int> instance_class;  // majority-vote class per id
    bool no_markers = false;
};

struct WatershedParams {
    float marker_threshold = 0.4f;  // tau_m on the normalized gradient energy
    int min_marker_size = 4;
};

/// Marker-controlled watershed over the Sobel gradient energy of the offset
/// channels, restricted to the structure-map foreground; the label grid
/// supplies per-instance classes by majority vote (ties -> lowest id).
ExtractResult extract_instances(const StructureMap& sm, const LabelGrid& label,
                                const WatershedParams& params = {});

/// Connected components (4-connectivity) of label>0; used where instance
/// grids are unavailable.
InstanceGrid connected_components(const LabelGrid& label);

}  // namespace nucleo
