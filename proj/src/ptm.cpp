#include "mrsv/ptm.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mrsv/nn/ops.hpp"

namespace mrsv {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr char kMagic[8] = {'M', 'R', 'S', 'V', 'P', 'T', 'M', '1'};
constexpr double kEnergyFloor = 1e-8;
constexpr double kNormEps = 1e-5;

}  // namespace

int PtmProvider::num_frames(std::size_t num_samples) const {
  if (num_samples < static_cast<std::size_t>(receptive_field())) return 0;
  return static_cast<int>((num_samples - receptive_field()) / stride()) + 1;
}

StubPtm::StubPtm(const StubPtmConfig& cfg) : num_layers_(cfg.num_layers), dim_(cfg.dim) {
  if (cfg.num_layers < 0 || cfg.dim <= 0) throw ConfigError("stub ptm: invalid geometry");
  origin_ = "seed=" + std::to_string(cfg.seed);
  Rng rng(derive_seed(cfg.seed, "stub-ptm"));
  std::uniform_real_distribution<double> log_freq(std::log(60.0), std::log(7600.0));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<double> freqs(dim_);
  for (auto& f : freqs) f = std::exp(log_freq(rng));
  std::sort(freqs.begin(), freqs.end());

  filters_.assign(static_cast<std::size_t>(2) * dim_ * kKernel, 0.0);
  for (int d = 0; d < dim_; ++d) {
    const double ph = phase(rng);
    double* c = &filters_[static_cast<std::size_t>(d) * kKernel];
    double* s = &filters_[static_cast<std::size_t>(dim_ + d) * kKernel];
    double nc = 0.0, ns = 0.0;
    for (int n = 0; n < kKernel; ++n) {
      const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (kKernel - 1));
      const double arg = 2.0 * std::numbers::pi * freqs[d] * n / kSampleRate + ph;
      c[n] = win * std::cos(arg);
      s[n] = win * std::sin(arg);
      nc += c[n] * c[n];
      ns += s[n] * s[n];
    }
    for (int n = 0; n < kKernel; ++n) {
      c[n] /= std::sqrt(nc);
      s[n] /= std::sqrt(ns);
    }
  }

  std::normal_distribution<double> a(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
  std::normal_distribution<double> b(0.0, 0.1);
  mixing_.resize(static_cast<std::size_t>(num_layers_) * dim_ * dim_);
  for (auto& v : mixing_) v = a(rng);
  mixing_bias_.resize(static_cast<std::size_t>(num_layers_) * dim_);
  for (auto& v : mixing_bias_) v = b(rng);
}

StubPtm::StubPtm(int num_layers, int dim, std::vector<double> filters, std::vector<double> mixing,
                 std::vector<double> mixing_bias)
    : num_layers_(num_layers),
      dim_(dim),
      origin_("weights"),
      filters_(std::move(filters)),
      mixing_(std::move(mixing)),
      mixing_bias_(std::move(mixing_bias)) {
  if (num_layers < 0 || dim <= 0) throw ConfigError("stub ptm: invalid geometry");
  check_sizes();
}

void StubPtm::check_sizes() const {
  const std::size_t d = dim_;
  if (filters_.size() != 2 * d * kKernel || mixing_.size() != num_layers_ * d * d ||
      mixing_bias_.size() != num_layers_ * d)
    throw Error("stub ptm: weight sizes do not match L=" + std::to_string(num_layers_) +
                ", D=" + std::to_string(dim_));
}

LayerStack StubPtm::extract(const AudioSegment& seg) const {
  const int frames = num_frames(seg.size());
  if (frames <= 0) throw Error("input shorter than receptive field");

  RowMatrix x(kKernel, frames);
  for (int t = 0; t < frames; ++t)
    for (int n = 0; n < kKernel; ++n)
      x(n, t) = seg.samples[static_cast<std::size_t>(t) * kStride + n];
  const Eigen::Map<const RowMatrix> f(filters_.data(), 2 * dim_, kKernel);
  const RowMatrix resp = f * x;

  const std::size_t layer_size = static_cast<std::size_t>(dim_) * frames;
  std::vector<double> out(layer_size * (num_layers_ + 1));
  Eigen::Map<RowMatrix> h0(out.data(), dim_, frames);
  h0 = (resp.topRows(dim_).array().square() + resp.bottomRows(dim_).array().square() +
        kEnergyFloor)
           .log()
           .matrix();

  RowMatrix u(dim_, frames);
  for (int l = 1; l <= num_layers_; ++l) {
    const Eigen::Map<const RowMatrix> prev(out.data() + (l - 1) * layer_size, dim_, frames);
    const Eigen::RowVectorXd mu = prev.colwise().mean();
    u = prev.rowwise() - mu;
    const Eigen::RowVectorXd sd =
        (u.array().square().colwise().sum() / dim_ + kNormEps).sqrt().matrix();
    u.array().rowwise() /= sd.array();
    const Eigen::Map<const RowMatrix> a(mixing_.data() + (l - 1) * static_cast<std::size_t>(dim_) * dim_,
                                        dim_, dim_);
    const Eigen::Map<const Eigen::VectorXd> b(mixing_bias_.data() + (l - 1) * dim_, dim_);
    Eigen::Map<RowMatrix> h(out.data() + l * layer_size, dim_, frames);
    h = u + ((a * u).colwise() + b).array().tanh().matrix();
  }
  return {nn::Tensor::from({num_layers_ + 1, dim_, frames}, std::move(out))};
}

std::uint64_t StubPtm::checksum() const {
  std::uint64_t h = mrsv::checksum(filters_);
  h = mrsv::checksum(mixing_, h);
  return mrsv::checksum(mixing_bias_, h);
}

std::string StubPtm::describe() const {
  return "stub(L=" + std::to_string(num_layers_) + ", D=" + std::to_string(dim_) + ", " +
         origin_ + ")";
}

namespace {

void write_header(std::ofstream& out, const nlohmann::json& header) {
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(len));
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t n, const std::string& what) {
  std::vector<double> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw Error("provider unavailable: truncated " + what);
  return v;
}

}  // namespace

void save_stub_header(const std::filesystem::path& path, const StubPtmConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_header(out, {{"kind", "stub"},
                     {"num_layers", cfg.num_layers},
                     {"dim", cfg.dim},
                     {"seed", cfg.seed}});
}

void save_conv_stack(const std::filesystem::path& path, const StubPtm& ptm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_header(out, {{"kind", "conv-stack"},
                     {"num_layers", ptm.num_layers()},
                     {"dim", ptm.dim()},
                     {"kernel", StubPtm::kKernel},
                     {"stride", StubPtm::kStride}});
  for (const auto* v : {&ptm.filters(), &ptm.mixing(), &ptm.mixing_bias()})
    out.write(reinterpret_cast<const char*>(v->data()),
              static_cast<std::streamsize>(v->size() * sizeof(double)));
}

std::unique_ptr<PtmProvider> checkpoint_shim(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("provider unavailable: cannot open " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) ||
      !in.read(reinterpret_cast<char*>(&len), 8) || len > (1u << 20))
    throw Error("provider unavailable: " + path.string() + " is not a PTM weight file");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw Error("provider unavailable: truncated header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("provider unavailable: bad header: ") + e.what());
  }
  try {
    const std::string kind = header.at("kind").get<std::string>();
    const int layers = header.at("num_layers").get<int>();
    const int dim = header.at("dim").get<int>();
    if (layers < 0 || dim <= 0) throw Error("provider unavailable: invalid geometry");
    if (kind == "stub")
      return std::make_unique<StubPtm>(
          StubPtmConfig{layers, dim, header.at("seed").get<std::uint64_t>()});
    if (kind == "conv-stack") {
      if (header.value("kernel", StubPtm::kKernel) != StubPtm::kKernel ||
          header.value("stride", StubPtm::kStride) != StubPtm::kStride)
        throw Error("provider unavailable: unsupported encoder geometry");
      const std::size_t d = dim;
      auto filters = read_doubles(in, 2 * d * StubPtm::kKernel, "encoder filters");
      auto mixing = read_doubles(in, layers * d * d, "mixing layers");
      auto bias = read_doubles(in, layers * d, "mixing biases");
      return std::make_unique<StubPtm>(layers, dim, std::move(filters), std::move(mixing),
                                       std::move(bias));
    }
    throw Error("provider unavailable: unknown kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("provider unavailable: incomplete header: ") + e.what());
  }
}

nn::Tensor batch_layer_stacks(const std::vector<LayerStack>& stacks) {
  if (stacks.empty()) throw Error("empty layer stack batch");
  const int k = stacks[0].layers.dim(0), d = stacks[0].dim(), t = stacks[0].num_frames();
  const int b = static_cast<int>(stacks.size());
  const std::size_t layer = static_cast<std::size_t>(d) * t;
  std::vector<double> out(static_cast<std::size_t>(k) * b * layer);
  for (int i = 0; i < b; ++i) {
    const auto& s = stacks[i].layers;
    if (s.shape() != stacks[0].layers.shape())
      throw Error("layer stacks in one batch must share a shape");
    for (int l = 0; l < k; ++l)
      std::copy_n(s.data().begin() + l * layer, layer,
                  out.begin() + (static_cast<std::size_t>(l) * b + i) * layer);
  }
  return nn::Tensor::from({k, b, d, t}, std::move(out));
}

FusionWeights::FusionWeights(int count)
    : raw(nn::Tensor::parameter({count}, std::vector<double>(count, 0.0))) {
  if (count <= 0) throw ConfigError("fusion weights need at least one layer");
}

nn::Tensor FusionWeights::normalized() const { return nn::softmax(raw, 0); }

std::vector<double> FusionWeights::normalized_values() const {
  nn::NoGradGuard guard;
  const nn::Tensor n = normalized();
  return {n.data().begin(), n.data().end()};
}

nn::Tensor fuse_layers(const nn::Tensor& stack, const FusionWeights& w) {
  if (stack.rank() < 2 || stack.dim(0) != w.size())
    throw Error("fusion weight count " + std::to_string(w.size()) +
                " does not match layer count " + std::to_string(stack.dim(0)));
  return nn::weighted_layer_sum(stack, w.normalized());
}

IntegrationMode parse_integration_mode(const std::string& s) {
  if (s == "plain_sum") return IntegrationMode::kPlainSum;
  if (s == "weighted") return IntegrationMode::kWeighted;
  throw ConfigError("unknown integration mode '" + s + "' (plain_sum|weighted)");
}

std::string to_string(IntegrationMode m) {
  return m == IntegrationMode::kPlainSum ? "plain_sum" : "weighted";
}

nn::Tensor integrate(const nn::Tensor& s, const nn::Tensor& fp, IntegrationMode mode,
                     const nn::Tensor& alpha, const nn::Tensor& beta) {
  if (s.shape() != fp.shape())
    throw Error("integration shape mismatch: " + nn::shape_str(s.shape()) + " vs " +
                nn::shape_str(fp.shape()));
  if (mode == IntegrationMode::kPlainSum) return nn::add(s, fp);
  const nn::Shape ones(s.rank(), 1);
  return nn::add(nn::mul(nn::reshape(alpha, ones), s), nn::mul(nn::reshape(beta, ones), fp));
}

void write_layer_weights_csv(std::ostream& out, const std::vector<std::string>& names,
                             const std::vector<std::vector<double>>& columns) {
  if (columns.empty() || names.size() != columns.size())
    throw Error("layer weight export: names and columns disagree");
  for (const auto& c : columns)
    if (c.size() != columns[0].size())
      throw Error("layer weight export: runs have different layer counts");
  out << "layer_index";
  if (columns.size() == 1) {
    out << ",weight";
  } else {
    for (const auto& n : names) out << ',' << n;
  }
  out << '\n';
  std::ostringstream row;
  for (std::size_t l = 0; l < columns[0].size(); ++l) {
    out << l;
    for (const auto& c : columns) {
      row.str({});
      row.precision(17);
      row << c[l];
      out << ',' << row.str();
    }
    out << '\n';
  }
}

}  // namespace mrsv
