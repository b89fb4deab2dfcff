#include "nestseg/optimizer.hpp"

#include <cmath>

#include "nestseg/util.hpp"

namespace nestseg {

void TrainConfig::validate() const {
  if (learning_rate <= 0) fail("train config: learning_rate must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    fail("train config: beta1 and beta2 must lie in [0, 1)");
  if (adam_epsilon <= 0) fail("train config: adam_epsilon must be positive");
  if (batch_size < 1) fail("train config: batch_size must be at least 1");
  if (max_epochs < 1) fail("train config: max_epochs must be at least 1");
  if (early_stop_patience < 1) fail("train config: early_stop_patience must be at least 1");
}

std::string TrainConfig::canonical_text() const {
  std::string out;
  out += "learning_rate = " + fmt_fixed(learning_rate, 8) + "\n";
  out += "beta1 = " + fmt_fixed(beta1, 6) + "\n";
  out += "beta2 = " + fmt_fixed(beta2, 6) + "\n";
  out += "adam_epsilon = " + fmt_fixed(adam_epsilon, 12) + "\n";
  out += "batch_size = " + std::to_string(batch_size) + "\n";
  out += "max_epochs = " + std::to_string(max_epochs) + "\n";
  out += "early_stop_patience = " + std::to_string(early_stop_patience) + "\n";
  out += "seed = " + std::to_string(seed) + "\n";
  return out;
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig config;
  for (const auto& [key, value] : parse_kv_text(text)) {
    if (key == "learning_rate") config.learning_rate = parse_double(value, key);
    else if (key == "beta1") config.beta1 = parse_double(value, key);
    else if (key == "beta2") config.beta2 = parse_double(value, key);
    else if (key == "adam_epsilon") config.adam_epsilon = parse_double(value, key);
    else if (key == "batch_size") config.batch_size = static_cast<int>(parse_long(value, key));
    else if (key == "max_epochs") config.max_epochs = static_cast<int>(parse_long(value, key));
    else if (key == "early_stop_patience")
      config.early_stop_patience = static_cast<int>(parse_long(value, key));
    else if (key == "seed") config.seed = static_cast<std::uint64_t>(parse_long(value, key));
    else fail("train config: unknown key '" + key + "'");
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(read_text_file(path));
}

void save_train_config(const TrainConfig& config, const std::string& path) {
  config.validate();
  write_text_file(path, config.canonical_text());
}

void AdamState::init(const std::vector<Parameter*>& params) {
  step = 0;
  slots.clear();
  slots.reserve(params.size());
  for (const Parameter* p : params) slots.push_back({Tensor(p->value.shape()),
                                                     Tensor(p->value.shape())});
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state,
               const TrainConfig& config) {
  if (!state.initialized()) state.init(params);
  if (state.slots.size() != params.size())
    fail("adam: state holds " + std::to_string(state.slots.size()) + " slots for " +
         std::to_string(params.size()) + " parameters");

  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    AdamState::Slot& slot = state.slots[k];
    if (!p.value.same_shape(slot.m))
      fail("adam: slot shape " + slot.m.shape_str() + " vs parameter " + p.name + " " +
           p.value.shape_str());
    float* value = p.value.data();
    const float* grad = p.grad.data();
    float* m = slot.m.data();
    float* v = slot.v.data();
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        fail("adam: non-finite gradient in " + p.name + " at flat index " + std::to_string(i));
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / corr1) / (std::sqrt(vi / corr2) + config.adam_epsilon);
      value[i] = static_cast<float>(value[i] - config.learning_rate * update);
    }
  }
}

}  // namespace nestseg
