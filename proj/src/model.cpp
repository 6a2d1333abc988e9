#include "mrsv/model.hpp"

namespace mrsv {

VariantSpec VariantSpec::from_name(const std::string& name) {
  if (name == "S1") return {name, true, false, false};
  if (name == "S2") return {name, true, false, true};
  if (name == "S3") return {name, true, true, false};
  if (name == "S4") return {name, true, true, true};
  if (name == "fbank_only") return {name, false, true, false};
  if (name == "fbank_mre") return {name, false, true, true};
  throw ConfigError("unknown variant '" + name + "' (S1|S2|S3|S4|fbank_only|fbank_mre)");
}

void VariantSpec::validate() const {
  if (!use_ptm && !use_fbank)
    throw ConfigError("variant " + name + ": needs the PTM or the FBank branch as input");
}

SpeakerModel::SpeakerModel(ModelConfig cfg, std::shared_ptr<const PtmProvider> ptm)
    : cfg_(std::move(cfg)), ptm_(std::move(ptm)) {
  if (!ptm_) throw ConfigError("model: a PTM provider is required for the frame grid");
  const VariantSpec& v = cfg_.variant;
  v.validate();
  if (cfg_.backbone.input_dim != ptm_->dim())
    throw ConfigError("model: backbone input_dim " + std::to_string(cfg_.backbone.input_dim) +
                      " does not match feature dim " + std::to_string(ptm_->dim()));
  if (cfg_.backbone.adapter_enabled != v.use_mre)
    throw ConfigError("model: adapters must be enabled exactly when the MRE is");

  if (v.use_ptm) {
    fusion_ = FusionWeights(ptm_->num_layers() + 1);
    if (cfg_.integration == IntegrationMode::kWeighted && v.use_fbank) {
      alpha_ = nn::Tensor::parameter({1}, {1.0});
      beta_ = nn::Tensor::parameter({1}, {1.0});
    }
  }
  if (v.use_fbank) {
    fbank_ = std::make_unique<FbankComputer>();
    Rng rng(derive_seed(cfg_.seed, kGroupExtractor));
    aligner_ = FbankAligner(fbank_->options().num_bins, ptm_->dim(), rng);
  }
  if (v.use_mre) {
    Rng rng(derive_seed(cfg_.seed, kGroupMre));
    mre_ = MultiResolutionEncoder(cfg_.mre, rng);
    cfg_.mre = mre_.config();
    if (cfg_.backbone.cond_dim != cfg_.mre.output_channels())
      throw ConfigError("model: adapter cond_dim " + std::to_string(cfg_.backbone.cond_dim) +
                        " does not match MRE output channels " +
                        std::to_string(cfg_.mre.output_channels()));
  }
  Rng backbone_rng(derive_seed(cfg_.seed, kGroupBackbone));
  Rng adapter_rng(derive_seed(cfg_.seed, kGroupAdapters));
  backbone_ = EcapaTdnn(cfg_.backbone, backbone_rng, adapter_rng);
}

std::size_t SpeakerModel::usable_length(std::size_t num_samples) const {
  if (!cfg_.variant.use_mre) return num_samples;
  return num_samples - num_samples % cfg_.mre.frame_shift;
}

SpeakerModel::Features SpeakerModel::features(const std::vector<AudioSegment>& batch,
                                              bool training) const {
  if (batch.empty()) throw Error("model: empty batch");
  const std::size_t len = batch[0].size();
  for (const auto& seg : batch)
    if (seg.size() != len) throw Error("model: segments in a batch must share a length");
  const int frames = ptm_->num_frames(len);
  if (frames <= 0) throw Error("input shorter than receptive field");

  Features f;
  const VariantSpec& v = cfg_.variant;
  if (v.use_ptm) {
    std::vector<LayerStack> stacks;
    stacks.reserve(batch.size());
    for (const auto& seg : batch) stacks.push_back(ptm_->extract(seg));
    f.ptm = fuse_layers(batch_layer_stacks(stacks), fusion_);
  }
  if (v.use_fbank) {
    std::vector<double> values;
    int bins = 0, tf = 0;
    for (const auto& seg : batch) {
      const FbankFeature fb = fbank_->compute(seg);
      bins = fb.num_bins();
      tf = fb.num_frames();
      values.insert(values.end(), fb.values.data().begin(), fb.values.data().end());
    }
    const auto fb = nn::Tensor::from({static_cast<int>(batch.size()), bins, tf}, std::move(values));
    f.fbank = aligner_.forward(fb, frames, training);
  }
  if (f.ptm.defined() && f.fbank.defined())
    f.input = integrate(f.ptm, f.fbank, cfg_.integration, alpha_, beta_);
  else
    f.input = f.ptm.defined() ? f.ptm : f.fbank;
  if (v.use_mre) {
    f.z_cond = mre_.forward(waveform_batch(batch));
    f.z_ds = downsample(f.z_cond, frames);
  }
  return f;
}

nn::Tensor SpeakerModel::forward(const std::vector<AudioSegment>& batch, bool training) const {
  const Features f = features(batch, training);
  return backbone_.forward(f.input, f.z_ds.defined() ? &f.z_ds : nullptr, training);
}

std::vector<double> SpeakerModel::embed(const AudioSegment& seg) const {
  nn::NoGradGuard guard;
  AudioSegment trimmed = seg;
  trimmed.samples.resize(usable_length(seg.size()));
  const nn::Tensor e = forward({trimmed}, false);
  return {e.data().begin(), e.data().end()};
}

std::vector<std::pair<std::string, nn::TensorList>> SpeakerModel::parameter_groups() const {
  std::vector<std::pair<std::string, nn::TensorList>> groups;
  const VariantSpec& v = cfg_.variant;
  if (v.use_ptm) {
    nn::TensorList g{{"fusion.raw", fusion_.raw}};
    if (alpha_.defined()) {
      g.push_back({"integration.alpha", alpha_});
      g.push_back({"integration.beta", beta_});
    }
    groups.emplace_back(kGroupFusion, std::move(g));
  }
  if (v.use_fbank) {
    nn::TensorList g;
    aligner_.collect("extractor", g);
    groups.emplace_back(kGroupExtractor, std::move(g));
  }
  if (v.use_mre) {
    nn::TensorList g;
    mre_.collect("mre", g);
    groups.emplace_back(kGroupMre, std::move(g));
    nn::TensorList a;
    backbone_.collect_adapters("adapter", a);
    groups.emplace_back(kGroupAdapters, std::move(a));
  }
  nn::TensorList b;
  backbone_.collect("ecapa", b);
  groups.emplace_back(kGroupBackbone, std::move(b));
  return groups;
}

nn::TensorList SpeakerModel::buffers() const {
  nn::TensorList out;
  if (cfg_.variant.use_fbank) aligner_.collect_buffers("extractor", out);
  backbone_.collect_buffers("ecapa", out);
  return out;
}

std::unique_ptr<SpeakerModel> build_variant(const VariantSpec& spec, ModelConfig cfg,
                                            std::shared_ptr<const PtmProvider> ptm) {
  spec.validate();
  if (!ptm) throw ConfigError("model: a PTM provider is required for the frame grid");
  cfg.variant = spec;
  cfg.backbone.input_dim = ptm->dim();
  cfg.backbone.adapter_enabled = spec.use_mre;
  if (spec.use_mre) {
    cfg.mre = validate_config(cfg.mre);
    cfg.backbone.cond_dim = cfg.mre.output_channels();
  } else {
    cfg.backbone.cond_dim = 0;
  }
  cfg.backbone.validate();
  return std::make_unique<SpeakerModel>(std::move(cfg), std::move(ptm));
}

}  // namespace mrsv
