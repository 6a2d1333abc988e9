// ECAPA-TDNN embedding network with optional FiLM adapters in front of each
// SE-Res2Block.
#pragma once

#include <string>
#include <vector>

#include "mrsv/nn/layers.hpp"

namespace mrsv {

struct BackboneConfig {
  int input_dim = 1024;
  int channels = 512;  // C
  int embedding_dim = 192;
  int num_blocks = 3;
  std::vector<int> dilations{2, 3, 4};  // cycled if num_blocks exceeds the list
  int kernel = 3;
  int res2_scale = 8;
  int se_channels = 128;
  int attention_channels = 128;
  bool adapter_enabled = false;
  int cond_dim = 0;  // N*Q of the conditioning features when adapters are on

  void validate() const;
};

// gamma, beta: [B, C, T]
struct FiLMParams {
  nn::Tensor gamma;
  nn::Tensor beta;
};

// h_bar = gamma * h + beta
nn::Tensor film_modulate(const nn::Tensor& h, const FiLMParams& p);

// 1x1 conv cond_dim -> 2C, zero-initialized; gamma = 1 + first half.
class Adapter {
 public:
  Adapter() = default;
  Adapter(int cond_dim, int channels, Rng& rng);
  FiLMParams make(const nn::Tensor& z_ds) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;
  int channels() const { return proj_.out_channels() / 2; }

 private:
  nn::Conv1d proj_;
};

// conv -> ReLU -> BN
class TdnnLayer {
 public:
  TdnnLayer() = default;
  TdnnLayer(int in, int out, int kernel, int dilation, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool training) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;
  void collect_buffers(const std::string& prefix, nn::TensorList& out) const;

 private:
  nn::Conv1d conv_;
  nn::BatchNorm1d bn_;
};

class SERes2Block {
 public:
  SERes2Block() = default;
  SERes2Block(int channels, int kernel, int dilation, int scale, int se_channels, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool training) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;
  void collect_buffers(const std::string& prefix, nn::TensorList& out) const;

 private:
  int scale_ = 1;
  TdnnLayer pre_, post_;
  std::vector<TdnnLayer> res2_;
  nn::Conv1d se_down_, se_up_;
};

// Attention weights from [x, mean(x), std(x)] context; returns [B, 2C].
class AttentiveStatsPool {
 public:
  AttentiveStatsPool() = default;
  AttentiveStatsPool(int channels, int attention_channels, Rng& rng);
  nn::Tensor forward(const nn::Tensor& x, bool training) const;
  void collect(const std::string& prefix, nn::TensorList& out) const;
  void collect_buffers(const std::string& prefix, nn::TensorList& out) const;

 private:
  TdnnLayer attention_;
  nn::Conv1d score_;
};

class EcapaTdnn {
 public:
  EcapaTdnn() = default;
  EcapaTdnn(const BackboneConfig& cfg, Rng& backbone_rng, Rng& adapter_rng);

  // x: [B, input_dim, T]; z_ds: [B, cond_dim, T] iff adapters are enabled.
  // Returns [B, embedding_dim].
  nn::Tensor forward(const nn::Tensor& x, const nn::Tensor* z_ds, bool training) const;
  FiLMParams make_film_params(const nn::Tensor& z_ds, int site) const;

  const BackboneConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, nn::TensorList& out) const;
  void collect_adapters(const std::string& prefix, nn::TensorList& out) const;
  void collect_buffers(const std::string& prefix, nn::TensorList& out) const;

 private:
  BackboneConfig cfg_;
  TdnnLayer stem_;
  std::vector<SERes2Block> blocks_;
  std::vector<Adapter> adapters_;
  TdnnLayer mfa_;
  AttentiveStatsPool pool_;
  nn::BatchNorm1d pool_bn_;
  nn::Conv1d embed_;
};

}  // namespace mrsv
