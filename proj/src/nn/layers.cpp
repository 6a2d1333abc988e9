#include "mrsv/nn/layers.hpp"

#include <cmath>

namespace mrsv::nn {

Conv1dOptions same_padding(int kernel, int dilation) {
  Conv1dOptions opt;
  opt.dilation = dilation;
  opt.pad_left = dilation * (kernel - 1) / 2;
  opt.pad_right = dilation * (kernel - 1) - opt.pad_left;
  return opt;
}

Conv1d::Conv1d(int in_channels, int out_channels, int kernel, const Conv1dOptions& opt,
               Rng& rng, bool with_bias)
    : options(opt) {
  if (in_channels % opt.groups || out_channels % opt.groups)
    throw Error("Conv1d: channels not divisible by groups");
  const int fan_in = in_channels / opt.groups * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(static_cast<std::size_t>(out_channels) * fan_in);
  for (double& v : w) v = u(rng);
  weight = Tensor::parameter({out_channels, in_channels / opt.groups, kernel}, std::move(w));
  if (with_bias) {
    std::vector<double> b(out_channels);
    for (double& v : b) v = u(rng);
    bias = Tensor::parameter({out_channels}, std::move(b));
  }
}

void Conv1d::zero_init() {
  for (double& v : weight.mutable_data()) v = 0.0;
  if (bias.defined())
    for (double& v : bias.mutable_data()) v = 0.0;
}

void Conv1d::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

BatchNorm1d::BatchNorm1d(int channels)
    : gamma(Tensor::parameter({channels}, std::vector<double>(channels, 1.0))),
      beta(Tensor::parameter({channels}, std::vector<double>(channels, 0.0))),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) const {
  Tensor mean = running_mean, var = running_var;
  return batch_norm(x, gamma, beta, mean, var, training);
}

void BatchNorm1d::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm1d::collect_buffers(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".running_mean", running_mean});
  out.push_back({prefix + ".running_var", running_var});
}

}  // namespace mrsv::nn
