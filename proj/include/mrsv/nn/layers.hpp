#pragma once

#include <string>
#include <vector>

#include "mrsv/common.hpp"
#include "mrsv/nn/ops.hpp"

namespace mrsv::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using TensorList = std::vector<NamedTensor>;

// "Same" padding for odd kernels at stride 1.
Conv1dOptions same_padding(int kernel, int dilation = 1);

class Conv1d {
 public:
  Conv1d() = default;
  // Weights and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Conv1d(int in_channels, int out_channels, int kernel, const Conv1dOptions& opt, Rng& rng,
         bool with_bias = true);

  Tensor forward(const Tensor& x) const { return conv1d(x, weight, bias, options); }
  void zero_init();
  void collect(const std::string& prefix, TensorList& out) const;

  int in_channels() const { return weight.dim(1) * options.groups; }
  int out_channels() const { return weight.dim(0); }
  int kernel() const { return weight.dim(2); }

  Tensor weight;
  Tensor bias;
  Conv1dOptions options;
};

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(int channels);

  // Running buffers are shared handles, so training mode still updates them.
  Tensor forward(const Tensor& x, bool training) const;
  void collect(const std::string& prefix, TensorList& out) const;
  void collect_buffers(const std::string& prefix, TensorList& out) const;

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
};

}  // namespace mrsv::nn
