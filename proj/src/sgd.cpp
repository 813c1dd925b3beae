#include "sakit/sgd.hpp"

namespace sakit {

template <class T>
void Sgd<T>::validate() const {
  if (!(config_.learning_rate >= 0)) throw Error("learning rate must be >= 0");
  if (!(config_.momentum >= 0 && config_.momentum < 1)) throw Error("momentum must be in [0, 1)");
  if (!(config_.weight_decay >= 0)) throw Error("weight decay must be >= 0");
}

template <class T>
void Sgd<T>::step(ParamMap<T>& params, const ParamMap<T>& grads) {
  const T lr = static_cast<T>(config_.learning_rate);
  const T mom = static_cast<T>(config_.momentum);
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw ShapeError(name, "no gradient for parameter");
    const auto& g = git->second;
    if (g.shape() != p.shape()) throw ShapeError(name, "gradient shape differs from parameter");
    const bool is_bn = name.ends_with(".gamma") || name.ends_with(".beta");
    const T wd = (is_bn && !config_.decay_bn) ? T(0) : static_cast<T>(config_.weight_decay);
    auto [vit, fresh] = velocity_.try_emplace(name, BasicTensor<T>(p.shape()));
    auto& v = vit->second;
    if (v.shape() != p.shape()) throw ShapeError(name, "velocity shape differs from parameter");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mom * v[i] + g[i] + wd * p[i];
      p[i] -= lr * v[i];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace sakit
