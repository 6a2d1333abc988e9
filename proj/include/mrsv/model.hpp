// Feature-branch lattice around the ECAPA-TDNN backbone:
//   S1 PTM, S2 PTM+MRE, S3 PTM+FBank, S4 PTM+FBank+MRE,
//   fbank_only, fbank_mre.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mrsv/backbone.hpp"
#include "mrsv/fbank.hpp"
#include "mrsv/mre.hpp"
#include "mrsv/ptm.hpp"

namespace mrsv {

inline constexpr const char* kGroupFusion = "ptm_fusion";
inline constexpr const char* kGroupExtractor = "cnn_extractor";
inline constexpr const char* kGroupMre = "mre";
inline constexpr const char* kGroupAdapters = "adapters";
inline constexpr const char* kGroupBackbone = "backbone";

struct VariantSpec {
  std::string name = "S4";
  bool use_ptm = true;
  bool use_fbank = true;
  bool use_mre = true;

  static VariantSpec from_name(const std::string& name);
  void validate() const;
};

struct ModelConfig {
  VariantSpec variant;
  MREConfig mre;
  BackboneConfig backbone;  // input_dim / adapter fields are filled in
  IntegrationMode integration = IntegrationMode::kPlainSum;
  std::uint64_t seed = 0;
};

class SpeakerModel {
 public:
  // The provider also fixes the frame grid (T, D) for variants that do not
  // consume its layers.
  SpeakerModel(ModelConfig cfg, std::shared_ptr<const PtmProvider> ptm);
  SpeakerModel(const SpeakerModel&) = delete;
  SpeakerModel& operator=(const SpeakerModel&) = delete;

  // Segments must share a length; with the MRE that length must be a
  // multiple of its frame shift.  Returns [B, embedding_dim].
  nn::Tensor forward(const std::vector<AudioSegment>& batch, bool training) const;

  // Inference on one utterance, trimming trailing samples the MRE cannot
  // use.
  std::vector<double> embed(const AudioSegment& seg) const;

  // Largest usable prefix length for this variant.
  std::size_t usable_length(std::size_t num_samples) const;
  int num_frames(std::size_t num_samples) const { return ptm_->num_frames(num_samples); }

  // Trainable parameters per group, in a fixed order; disabled branches
  // contribute no group.
  std::vector<std::pair<std::string, nn::TensorList>> parameter_groups() const;
  nn::TensorList buffers() const;

  const ModelConfig& config() const { return cfg_; }
  const PtmProvider& ptm() const { return *ptm_; }
  const FusionWeights* fusion() const { return cfg_.variant.use_ptm ? &fusion_ : nullptr; }
  const EcapaTdnn& backbone() const { return backbone_; }
  const MultiResolutionEncoder* mre() const { return cfg_.variant.use_mre ? &mre_ : nullptr; }

  // Intermediate features for one batch, for inspection and tests.
  struct Features {
    nn::Tensor ptm;        // S  [B, D, T]
    nn::Tensor fbank;      // F' [B, D, T]
    nn::Tensor input;      // backbone input
    nn::Tensor z_cond;     // [B, N*Q, T']
    nn::Tensor z_ds;       // [B, N*Q, T]
  };
  Features features(const std::vector<AudioSegment>& batch, bool training) const;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const PtmProvider> ptm_;
  std::unique_ptr<FbankComputer> fbank_;
  FusionWeights fusion_;
  nn::Tensor alpha_, beta_;
  FbankAligner aligner_;
  MultiResolutionEncoder mre_;
  EcapaTdnn backbone_;
};

// Fills the derived geometry into cfg (backbone input_dim, adapter switch
// and conditioning width), validates it and builds the model.
std::unique_ptr<SpeakerModel> build_variant(const VariantSpec& spec, ModelConfig cfg,
                                            std::shared_ptr<const PtmProvider> ptm);

}  // namespace mrsv
