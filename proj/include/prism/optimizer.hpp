#pragma once

#include <map>
#include <string>

#include "prism/autograd.hpp"

namespace prism {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Linear warm-up to the base rate, then cosine decay to min_ratio * base.
struct CosineSchedule {
  long long warmup_steps = 10;
  long long total_steps = 100;
  double min_ratio = 0.1;

  double factor(long long step) const;
};

// Decoupled weight decay (matrices only; vectors such as biases, LayerNorm
// scales and the mask token are not decayed). Parameters marked
// untrainable are never touched.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ad::ParameterSet& params, double lr);

  long long steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  struct Moments {
    ad::Matrix m;
    ad::Matrix v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  void restore(long long steps_taken, std::map<std::string, Moments> state) {
    t_ = steps_taken;
    state_ = std::move(state);
  }

 private:
  AdamWConfig cfg_;
  long long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace prism
