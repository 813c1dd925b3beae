#pragma once

#include "sakit/graph.hpp"

namespace sakit {

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decay_bn = true;  // apply weight decay to BN gamma/beta too
};

// Classical momentum SGD with L2 decay folded into the gradient:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
template <class T>
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) { validate(); }

  void set_learning_rate(double lr) {
    config_.learning_rate = lr;
    validate();
  }
  const SgdConfig& config() const { return config_; }
  const ParamMap<T>& velocity() const { return velocity_; }

  void step(ParamMap<T>& params, const ParamMap<T>& grads);

 private:
  void validate() const;

  SgdConfig config_;
  ParamMap<T> velocity_;
};

}  // namespace sakit
