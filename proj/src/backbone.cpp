#include "mrsv/backbone.hpp"

namespace mrsv {

namespace {

constexpr double kStdFloor = 1e-12;

}  // namespace

void BackboneConfig::validate() const {
  if (input_dim <= 0) throw ConfigError("backbone: input_dim must be positive");
  if (channels <= 0) throw ConfigError("backbone: channels must be positive");
  if (num_blocks < 1) throw ConfigError("backbone: num_blocks must be >= 1");
  if (embedding_dim <= 0) throw ConfigError("backbone: embedding_dim must be positive");
  if (dilations.empty()) throw ConfigError("backbone: dilations must be non-empty");
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("backbone: kernel must be odd");
  if (res2_scale < 1 || channels % res2_scale != 0)
    throw ConfigError("backbone: channels must be divisible by res2_scale");
  if (se_channels <= 0 || attention_channels <= 0)
    throw ConfigError("backbone: se/attention channels must be positive");
  if (adapter_enabled && cond_dim <= 0)
    throw ConfigError("backbone: adapters need a positive cond_dim");
}

nn::Tensor film_modulate(const nn::Tensor& h, const FiLMParams& p) {
  if (p.gamma.shape() != h.shape() || p.beta.shape() != h.shape())
    throw Error("film: parameter shape " + nn::shape_str(p.gamma.shape()) +
                " does not match hidden shape " + nn::shape_str(h.shape()));
  return nn::add(nn::mul(p.gamma, h), p.beta);
}

Adapter::Adapter(int cond_dim, int channels, Rng& rng) : proj_(cond_dim, 2 * channels, 1, {}, rng) {
  proj_.zero_init();
}

FiLMParams Adapter::make(const nn::Tensor& z_ds) const {
  if (z_ds.rank() != 3 || z_ds.dim(1) != proj_.in_channels())
    throw Error("adapter: expected [B, " + std::to_string(proj_.in_channels()) +
                ", T] conditioning, got " + nn::shape_str(z_ds.shape()));
  const nn::Tensor y = proj_.forward(z_ds);
  const int c = channels();
  return {nn::add_scalar(nn::narrow(y, 1, 0, c), 1.0), nn::narrow(y, 1, c, c)};
}

void Adapter::collect(const std::string& prefix, nn::TensorList& out) const {
  proj_.collect(prefix + ".proj", out);
}

TdnnLayer::TdnnLayer(int in, int out, int kernel, int dilation, Rng& rng)
    : conv_(in, out, kernel, nn::same_padding(kernel, dilation), rng), bn_(out) {}

nn::Tensor TdnnLayer::forward(const nn::Tensor& x, bool training) const {
  return bn_.forward(nn::relu(conv_.forward(x)), training);
}

void TdnnLayer::collect(const std::string& prefix, nn::TensorList& out) const {
  conv_.collect(prefix + ".conv", out);
  bn_.collect(prefix + ".bn", out);
}

void TdnnLayer::collect_buffers(const std::string& prefix, nn::TensorList& out) const {
  bn_.collect_buffers(prefix + ".bn", out);
}

SERes2Block::SERes2Block(int channels, int kernel, int dilation, int scale, int se_channels,
                         Rng& rng)
    : scale_(scale),
      pre_(channels, channels, 1, 1, rng),
      post_(channels, channels, 1, 1, rng),
      se_down_(channels, se_channels, 1, {}, rng),
      se_up_(se_channels, channels, 1, {}, rng) {
  const int width = channels / scale;
  for (int i = 1; i < scale; ++i) res2_.emplace_back(width, width, kernel, dilation, rng);
}

nn::Tensor SERes2Block::forward(const nn::Tensor& x, bool training) const {
  const nn::Tensor h = pre_.forward(x, training);
  const int width = h.dim(1) / scale_;
  std::vector<nn::Tensor> parts{nn::narrow(h, 1, 0, width)};
  nn::Tensor prev;
  for (int i = 1; i < scale_; ++i) {
    nn::Tensor chunk = nn::narrow(h, 1, i * width, width);
    if (i > 1) chunk = nn::add(chunk, prev);
    prev = res2_[i - 1].forward(chunk, training);
    parts.push_back(prev);
  }
  const nn::Tensor y = post_.forward(scale_ > 1 ? nn::concat(parts, 1) : parts[0], training);
  const nn::Tensor s =
      nn::sigmoid(se_up_.forward(nn::relu(se_down_.forward(nn::mean(y, 2, true)))));
  return nn::add(nn::mul(y, s), x);
}

void SERes2Block::collect(const std::string& prefix, nn::TensorList& out) const {
  pre_.collect(prefix + ".tdnn1", out);
  for (std::size_t i = 0; i < res2_.size(); ++i)
    res2_[i].collect(prefix + ".res2." + std::to_string(i), out);
  post_.collect(prefix + ".tdnn2", out);
  se_down_.collect(prefix + ".se.down", out);
  se_up_.collect(prefix + ".se.up", out);
}

void SERes2Block::collect_buffers(const std::string& prefix, nn::TensorList& out) const {
  pre_.collect_buffers(prefix + ".tdnn1", out);
  for (std::size_t i = 0; i < res2_.size(); ++i)
    res2_[i].collect_buffers(prefix + ".res2." + std::to_string(i), out);
  post_.collect_buffers(prefix + ".tdnn2", out);
}

AttentiveStatsPool::AttentiveStatsPool(int channels, int attention_channels, Rng& rng)
    : attention_(3 * channels, attention_channels, 1, 1, rng),
      score_(attention_channels, channels, 1, {}, rng) {}

nn::Tensor AttentiveStatsPool::forward(const nn::Tensor& x, bool training) const {
  const int t = x.dim(2);
  // Global context with uniform weights.
  const nn::Tensor mu0 = nn::mean(x, 2, true);
  const nn::Tensor sd0 =
      nn::sqrt(nn::clamp_min(nn::mean(nn::square(nn::sub(x, mu0)), 2, true), kStdFloor));
  const nn::Tensor ctx = nn::concat({x, nn::expand(mu0, 2, t), nn::expand(sd0, 2, t)}, 1);

  const nn::Tensor alpha =
      nn::softmax(score_.forward(nn::tanh(attention_.forward(ctx, training))), 2);
  const nn::Tensor mu = nn::sum(nn::mul(alpha, x), 2, true);
  const nn::Tensor var = nn::sum(nn::mul(alpha, nn::square(nn::sub(x, mu))), 2, true);
  const nn::Tensor sd = nn::sqrt(nn::clamp_min(var, kStdFloor));
  const nn::Tensor pooled = nn::concat({mu, sd}, 1);
  return nn::reshape(pooled, {x.dim(0), 2 * x.dim(1)});
}

void AttentiveStatsPool::collect(const std::string& prefix, nn::TensorList& out) const {
  attention_.collect(prefix + ".attention", out);
  score_.collect(prefix + ".score", out);
}

void AttentiveStatsPool::collect_buffers(const std::string& prefix, nn::TensorList& out) const {
  attention_.collect_buffers(prefix + ".attention", out);
}

EcapaTdnn::EcapaTdnn(const BackboneConfig& cfg, Rng& backbone_rng, Rng& adapter_rng) : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.channels;
  stem_ = TdnnLayer(cfg_.input_dim, c, 5, 1, backbone_rng);
  for (int b = 0; b < cfg_.num_blocks; ++b)
    blocks_.emplace_back(c, cfg_.kernel, cfg_.dilations[b % cfg_.dilations.size()],
                         cfg_.res2_scale, cfg_.se_channels, backbone_rng);
  mfa_ = TdnnLayer(c * cfg_.num_blocks, c * cfg_.num_blocks, 1, 1, backbone_rng);
  pool_ = AttentiveStatsPool(c * cfg_.num_blocks, cfg_.attention_channels, backbone_rng);
  pool_bn_ = nn::BatchNorm1d(2 * c * cfg_.num_blocks);
  embed_ = nn::Conv1d(2 * c * cfg_.num_blocks, cfg_.embedding_dim, 1, {}, backbone_rng);
  // Adapters draw from their own stream so the backbone init is the same
  // with and without them.
  if (cfg_.adapter_enabled)
    for (int b = 0; b < cfg_.num_blocks; ++b) adapters_.emplace_back(cfg_.cond_dim, c, adapter_rng);
}

FiLMParams EcapaTdnn::make_film_params(const nn::Tensor& z_ds, int site) const {
  if (site < 0 || site >= static_cast<int>(adapters_.size()))
    throw Error("no adapter at site " + std::to_string(site));
  return adapters_[site].make(z_ds);
}

nn::Tensor EcapaTdnn::forward(const nn::Tensor& x, const nn::Tensor* z_ds, bool training) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.input_dim)
    throw Error("backbone: expected [B, " + std::to_string(cfg_.input_dim) + ", T] input, got " +
                nn::shape_str(x.shape()));
  if (cfg_.adapter_enabled && !z_ds)
    throw Error("backbone: adapters enabled but no conditioning features given");
  if (!cfg_.adapter_enabled && z_ds)
    throw Error("backbone: conditioning features given but adapters are disabled");

  nn::Tensor h = stem_.forward(x, training);
  std::vector<nn::Tensor> outs;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (z_ds) h = film_modulate(h, adapters_[b].make(*z_ds));
    h = blocks_[b].forward(h, training);
    outs.push_back(h);
  }
  const nn::Tensor agg = mfa_.forward(nn::concat(outs, 1), training);
  const nn::Tensor pooled = pool_bn_.forward(pool_.forward(agg, training), training);
  const int width = pooled.dim(1);
  const nn::Tensor e = embed_.forward(nn::reshape(pooled, {pooled.dim(0), width, 1}));
  return nn::reshape(e, {e.dim(0), cfg_.embedding_dim});
}

void EcapaTdnn::collect(const std::string& prefix, nn::TensorList& out) const {
  stem_.collect(prefix + ".stem", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    blocks_[b].collect(prefix + ".block" + std::to_string(b), out);
  mfa_.collect(prefix + ".mfa", out);
  pool_.collect(prefix + ".pool", out);
  pool_bn_.collect(prefix + ".pool_bn", out);
  embed_.collect(prefix + ".embed", out);
}

void EcapaTdnn::collect_adapters(const std::string& prefix, nn::TensorList& out) const {
  for (std::size_t b = 0; b < adapters_.size(); ++b)
    adapters_[b].collect(prefix + ".site" + std::to_string(b), out);
}

void EcapaTdnn::collect_buffers(const std::string& prefix, nn::TensorList& out) const {
  stem_.collect_buffers(prefix + ".stem", out);
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    blocks_[b].collect_buffers(prefix + ".block" + std::to_string(b), out);
  mfa_.collect_buffers(prefix + ".mfa", out);
  pool_.collect_buffers(prefix + ".pool", out);
  pool_bn_.collect_buffers(prefix + ".pool_bn", out);
}

}  // namespace mrsv
