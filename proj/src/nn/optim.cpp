#include "mrsv/nn/optim.hpp"

#include <cmath>

namespace mrsv::nn {

AdamW::AdamW(std::vector<Slot> slots, AdamWOptions opt) : slots_(std::move(slots)), opt_(opt) {
  for (const Slot& s : slots_) {
    m_.emplace_back(s.tensor.size(), 0.0);
    v_.emplace_back(s.tensor.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t s = 0; s < slots_.size(); ++s) {
    Tensor& p = slots_[s].tensor;
    auto value = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[s];
    auto& v = v_[s];
    const double decay = slots_[s].decay ? lr * opt_.weight_decay : 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      if (decay != 0.0) value[i] -= decay * value[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
      value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (Slot& s : slots_) s.tensor.zero_grad();
}

}  // namespace mrsv::nn
