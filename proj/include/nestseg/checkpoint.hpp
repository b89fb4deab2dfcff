#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestseg/graph.hpp"
#include "nestseg/optimizer.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

// Serialized training state. Records hold the graph parameters in declaration
// order, then the optimizer moments as adam.m.<param> / adam.v.<param> pairs
// when a snapshot included them. The fingerprint ties the record set to the
// architecture that produced it.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t fingerprint = 0;
  std::uint32_t epoch = 0;
  double best_val_iou = 0.0;
  std::int64_t adam_step = 0;

  struct Record {
    std::string name;
    Tensor value;
  };
  std::vector<Record> records;

  const Record* find(const std::string& name) const;
};

Checkpoint snapshot(const ModelGraph& graph, const AdamState* state, std::uint32_t epoch,
                    double best_val_iou);

// Loads parameter values (and moments, when both the checkpoint and `state`
// carry them) back into the graph. Rejects fingerprint or shape mismatches.
void restore(const Checkpoint& ckpt, const ModelGraph& graph, AdamState* state);

// On-disk layout, little-endian: magic "UNPP", u32 version, u64 fingerprint,
// u32 epoch, f64 best_val_iou, u64 step, u32 record count, then per record
// u32 name length, name bytes, u32 ndim, u64 dims, raw f32 data. Equal
// checkpoints serialize to equal bytes.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nestseg
