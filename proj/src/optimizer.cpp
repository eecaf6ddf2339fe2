#include "prism/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace prism {

double CosineSchedule::factor(long long step) const {
  if (warmup_steps > 0 && step < warmup_steps)
    return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const long long span = std::max<long long>(1, total_steps - warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(ad::ParameterSet& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p->trainable) continue;
    auto& s = state_[p->name];
    if (s.m.size() == 0) {
      s.m = ad::Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = ad::Matrix::Zero(p->value.rows(), p->value.cols());
    }
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p->grad;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
    const bool decay = p->value.rows() > 1 && p->value.cols() > 1;
    if (decay && cfg_.weight_decay > 0.0) p->value *= (1.0 - lr * cfg_.weight_decay);
    p->value.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace prism
