#pragma once

#include <string>
#include <vector>

#include "mba/network.hpp"

// Checkpoint file layout (all integers little-endian):
//   magic "MBANETCK" (8 bytes), u32 version, u32 tensor count,
//   directory: per tensor u16 name length, name bytes, u8 dtype (0 = f32),
//              u8 ndim, i32 extents..., u64 payload offset,
//   payload: raw element data at the recorded offsets.

namespace mba {

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::string& path);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Full network state (parameters + batch norm buffers). Loading is strict:
// unknown names are rejected, missing names are reported with the complete
// list, and shapes must match per name. On any error the network is left
// untouched.
void save_checkpoint(Network& net, const std::string& path);
void load_checkpoint(Network& net, const std::string& path);

// Lenient import of trunk weights (names starting with "backbone.") from a
// checkpoint that may belong to a differently configured network.
void import_backbone(Network& net, const std::string& path);

}  // namespace mba
