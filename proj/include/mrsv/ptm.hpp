// Frozen pretrained-model layer representations and their fusion with the
// aligned filterbank branch.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "mrsv/audio.hpp"
#include "mrsv/nn/tensor.hpp"

namespace mrsv {

// layers: [L+1, D, T]; index 0 is the convolutional encoder output.
struct LayerStack {
  nn::Tensor layers;
  int num_layers() const { return layers.dim(0) - 1; }
  int dim() const { return layers.dim(1); }
  int num_frames() const { return layers.dim(2); }
};

// Read-only after construction; extract() may run concurrently.
class PtmProvider {
 public:
  virtual ~PtmProvider() = default;

  virtual LayerStack extract(const AudioSegment& seg) const = 0;
  virtual int num_layers() const = 0;  // L; the stack holds L+1 entries
  virtual int dim() const = 0;
  virtual int receptive_field() const = 0;
  virtual int stride() const = 0;
  // Hash over every frozen parameter.
  virtual std::uint64_t checksum() const = 0;
  virtual std::string describe() const = 0;

  // floor((n - receptive_field) / stride) + 1, or 0 when too short.
  int num_frames(std::size_t num_samples) const;
};

struct StubPtmConfig {
  int num_layers = 4;
  int dim = 16;
  std::uint64_t seed = 7;
};

// Quadrature pairs of windowed sinusoids (kernel 400, stride 320) give a
// log band-energy map H_0; each mixing layer then applies
//   u = frame_norm(H_{l-1}),  H_l = u + tanh(A_l u + b_l)
// with fixed random A_l, b_l.
class StubPtm : public PtmProvider {
 public:
  static constexpr int kKernel = 400;
  static constexpr int kStride = 320;

  explicit StubPtm(const StubPtmConfig& cfg);
  // Explicit weights: filters [2*dim*kKernel] (cos rows then sin rows),
  // mixing [num_layers * dim * dim], mixing_bias [num_layers * dim].
  StubPtm(int num_layers, int dim, std::vector<double> filters, std::vector<double> mixing,
          std::vector<double> mixing_bias);

  LayerStack extract(const AudioSegment& seg) const override;
  int num_layers() const override { return num_layers_; }
  int dim() const override { return dim_; }
  int receptive_field() const override { return kKernel; }
  int stride() const override { return kStride; }
  std::uint64_t checksum() const override;
  std::string describe() const override;

  const std::vector<double>& filters() const { return filters_; }
  const std::vector<double>& mixing() const { return mixing_; }
  const std::vector<double>& mixing_bias() const { return mixing_bias_; }

 private:
  void check_sizes() const;

  int num_layers_;
  int dim_;
  std::string origin_;
  std::vector<double> filters_;
  std::vector<double> mixing_;
  std::vector<double> mixing_bias_;
};

// PTM weight files: "MRSVPTM1", u64 header length, JSON header, payload.
// Header {"kind": "stub", "num_layers", "dim", "seed"} regenerates a stub;
// {"kind": "conv-stack", "num_layers", "dim"} is followed by float64
// filters, mixing and mixing_bias as laid out for StubPtm.  Geometry always
// comes from the file.  Missing or unreadable files raise
// "provider unavailable".
std::unique_ptr<PtmProvider> checkpoint_shim(const std::filesystem::path& path);
void save_stub_header(const std::filesystem::path& path, const StubPtmConfig& cfg);
void save_conv_stack(const std::filesystem::path& path, const StubPtm& ptm);

// Stacks per-utterance layer stacks into [L+1, B, D, T].
nn::Tensor batch_layer_stacks(const std::vector<LayerStack>& stacks);

// Raw fusion weights; normalized = softmax(raw).  Zero init = uniform.
class FusionWeights {
 public:
  FusionWeights() = default;
  explicit FusionWeights(int count);

  int size() const { return raw.dim(0); }
  nn::Tensor normalized() const;
  std::vector<double> normalized_values() const;

  nn::Tensor raw;
};

// S = sum_l softmax(w)_l * H_l over the leading axis of stack.
nn::Tensor fuse_layers(const nn::Tensor& stack, const FusionWeights& w);

enum class IntegrationMode { kPlainSum, kWeighted };

IntegrationMode parse_integration_mode(const std::string& s);
std::string to_string(IntegrationMode m);

// plain_sum: S + F'.  weighted: alpha * S + beta * F' with alpha, beta [1].
nn::Tensor integrate(const nn::Tensor& s, const nn::Tensor& fp, IntegrationMode mode,
                     const nn::Tensor& alpha, const nn::Tensor& beta);

// `layer_index,weight` for one column; with several columns the header
// becomes `layer_index,<name>,...` so runs can be compared side by side.
void write_layer_weights_csv(std::ostream& out, const std::vector<std::string>& names,
                             const std::vector<std::vector<double>>& columns);

}  // namespace mrsv
