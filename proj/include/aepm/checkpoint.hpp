#pragma once

#include <cstdint>
#include <string>

#include "aepm/model.hpp"

namespace aepm {

/// Bookkeeping carried alongside the weights so training can resume with
/// continued epoch numbering.
struct CheckpointMeta {
    uint32_t epochs_completed = 0;
    double best_val_rmse_deg = 0.0;
};

/// Sectioned little-endian binary container, version 1:
///   magic "AEPMCKPT" | u32 version | config ints | u32 flags |
///   meta (u32 epochs, f64 best val) | u32 tensor count |
///   per tensor: u32 name len, name bytes, u32 rank, u32 dims..., payload
/// Payloads are row-major 32-bit floats. save(load(file)) is byte-identical.
void save_checkpoint(const std::string& path, const ModelParameters& params,
                     const CheckpointMeta& meta = {});
ModelParameters load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

} // namespace aepm
