#ifndef DACKGR_OPTIM_H_
#define DACKGR_OPTIM_H_

#include <cstdint>
#include <vector>

#include "dackgr/autodiff.h"

namespace dackgr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  void step();
  void zero_grad();
  std::int64_t steps() const { return steps_; }
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t steps_ = 0;
};

}  // namespace dackgr

#endif  // DACKGR_OPTIM_H_
