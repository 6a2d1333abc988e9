// Differentiable ops over mrsv::nn::Tensor.
//
// Binary elementwise ops broadcast between equal-rank operands whose
// dimensions are equal or 1.  Convolutions use the [batch, channels, time]
// layout throughout.
#pragma once

#include <span>
#include <vector>

#include "mrsv/nn/tensor.hpp"

namespace mrsv::nn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double v);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
// max(x, floor); the gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double floor);

Tensor sum(const Tensor& x, int axis, bool keepdim = true);
Tensor mean(const Tensor& x, int axis, bool keepdim = true);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& x, int axis, int start, int length);
Tensor reshape(const Tensor& x, Shape shape);
// Repeats a size-1 axis n times.
Tensor expand(const Tensor& x, int axis, int n);

struct Conv1dOptions {
  int stride = 1;
  int pad_left = 0;
  int pad_right = 0;
  int dilation = 1;
  int groups = 1;
};

int conv1d_output_length(int input_length, int kernel, const Conv1dOptions& opt);

// x: [B, Cin, T], weight: [Cout, Cin/groups, K], bias: [Cout] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dOptions& opt = {});

// x: [B, C, T] or [B, C].  In training mode normalizes with batch
// statistics over (B, T) and updates the running buffers in place.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

// Global layer norm: per batch item, mean/variance over all channel and
// time positions jointly, followed by a per-channel affine.
Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-8);

// Output frame t averages input frames [floor(t*T_in/T_out), ceil((t+1)*T_in/T_out)).
Tensor adaptive_avg_pool1d(const Tensor& x, int output_length);

// sum_k weights[k] * stack[k, ...]; weights has shape [K].
Tensor weighted_layer_sum(const Tensor& stack, const Tensor& weights);

}  // namespace mrsv::nn
