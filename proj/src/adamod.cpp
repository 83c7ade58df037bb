#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ucdg/train.hpp"

namespace ucdg {

AdaMod::AdaMod(ParameterList params, AdaModConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr >= 0.0)) throw std::invalid_argument("AdaMod: learning rate must be non-negative");
  for (double b : {cfg_.beta1, cfg_.beta2, cfg_.beta3}) {
    if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("AdaMod: betas must be in [0, 1)");
  }
  if (!(cfg_.eps > 0.0)) throw std::invalid_argument("AdaMod: eps must be positive");
  if (!(cfg_.weight_decay >= 0.0)) throw std::invalid_argument("AdaMod: weight decay must be non-negative");
  slots_.reserve(params_.size());
  for (const Parameter* p : params_) {
    const Shape& s = p->value.shape();
    slots_.push_back({Tensor(s), Tensor(s), Tensor(s)});
  }
}

void AdaMod::step() {
  for (const Parameter* p : params_) {
    for (double g : p->grad.data()) {
      if (!std::isfinite(g)) throw std::domain_error("AdaMod: non-finite gradient in parameter " + p->name);
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  const double base = cfg_.lr * std::sqrt(bc2) / bc1;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Slot& s = slots_[k];
    auto w = p.value.data();
    const auto g = p.grad.data();
    auto m = s.exp_avg.data();
    auto v = s.exp_avg_sq.data();
    auto bound = s.exp_avg_lr.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = g[i] + cfg_.weight_decay * w[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
      const double step_size = base / (std::sqrt(v[i]) + cfg_.eps);
      bound[i] = cfg_.beta3 * bound[i] + (1.0 - cfg_.beta3) * step_size;
      w[i] -= std::min(step_size, bound[i]) * m[i];
    }
  }
}

double lr_schedule(std::size_t epoch, double base_lr) {
  if (epoch == 0) throw std::invalid_argument("lr_schedule: epochs are counted from 1");
  if (epoch <= 80) return base_lr;
  if (epoch <= 90) return base_lr * 0.1;
  if (epoch <= 100) return base_lr * 0.01;
  return base_lr * 0.001;
}

}  // namespace ucdg
