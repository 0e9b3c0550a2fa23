#pragma once

#include <string>

#include "dacsm/model.hpp"

namespace dacsm {

// JSON checkpoint, schema "dacsm-checkpoint-v1": model hyperparameters plus a
// flat path -> {shape, data} map covering every trainable tensor. Values
// round-trip exactly (shortest-representation doubles).
void save_checkpoint(const std::string& path, const Model& m);

// Throws CheckpointError on unreadable files, schema mismatch, missing or
// unexpected parameters, or shape mismatch.
Model load_checkpoint(const std::string& path);

}  // namespace dacsm
