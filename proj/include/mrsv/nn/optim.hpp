#pragma once

#include <cstdint>
#include <vector>

#include "mrsv/nn/tensor.hpp"

namespace mrsv::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-5;
};

// Decoupled weight decay; `decay` selects which tensors it applies to.
class AdamW {
 public:
  struct Slot {
    Tensor tensor;
    bool decay = true;
  };

  AdamW(std::vector<Slot> slots, AdamWOptions opt);

  // Tensors without a gradient buffer are treated as having a zero gradient.
  void step(double lr);
  void zero_grad();
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<Slot> slots_;
  std::vector<std::vector<double>> m_, v_;
  AdamWOptions opt_;
  std::int64_t t_ = 0;
};

}  // namespace mrsv::nn
