#include "dackgr/optim.h"

#include <cmath>

namespace dackgr {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.size() != p.value.size()) continue;  // never touched
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) {
    if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.shape());
    p->zero_grad();
  }
}

}  // namespace dackgr
