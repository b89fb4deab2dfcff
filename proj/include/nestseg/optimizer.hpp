#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nestseg/tape.hpp"
#include "nestseg/tensor.hpp"

namespace nestseg {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 4;
  int max_epochs = 20;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  std::string canonical_text() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
void save_train_config(const TrainConfig& config, const std::string& path);

// Bias-corrected first/second moments, one slot per parameter in the graph's
// declaration order. The slot list and the step counter are checkpointed so a
// restored run continues the same trajectory.
struct AdamState {
  std::int64_t step = 0;
  struct Slot {
    Tensor m;
    Tensor v;
  };
  std::vector<Slot> slots;

  void init(const std::vector<Parameter*>& params);
  bool initialized() const { return !slots.empty(); }
};

// One update from the gradients currently held by the parameters. Rejects
// non-finite gradients, naming the parameter; grads are left intact (the
// caller zeroes them before the next backward pass).
void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const TrainConfig& config);

}  // namespace nestseg
