#include "mrsv/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "mrsv/model.hpp"
#include "mrsv/training.hpp"

namespace mrsv {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'S', 'V', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw Error("checkpoint " + path + ": truncated");
  return v;
}

std::string get_string(std::ifstream& in, const std::string& path) {
  const auto n = get<std::uint32_t>(in, path);
  if (n > (1u << 16)) throw Error("checkpoint " + path + ": corrupt name");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw Error("checkpoint " + path + ": truncated");
  return s;
}

}  // namespace

bool Checkpoint::has_group(const std::string& group) const {
  return std::any_of(groups.begin(), groups.end(), [&](const auto& g) { return g.first == group; });
}

const nn::Tensor* Checkpoint::find(const std::string& group, const std::string& name) const {
  for (const auto& [g, list] : groups) {
    if (g != group) continue;
    for (const auto& t : list)
      if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                      const GroupedTensors& groups) {
  // Write-then-rename so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string text = config.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint32_t count = 0;
    for (const auto& g : groups) count += static_cast<std::uint32_t>(g.second.size());
    put<std::uint32_t>(out, count);
    for (const auto& [group, list] : groups)
      for (const auto& [name, t] : list) {
        put_string(out, group);
        put_string(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
      }
    if (!out) throw Error("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + p);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8))
    throw Error("checkpoint " + p + ": not a model checkpoint");
  const auto version = get<std::uint32_t>(in, p);
  if (version != kCheckpointVersion)
    throw Error("checkpoint " + p + ": unsupported version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, p);
  if (len > (1u << 24)) throw Error("checkpoint " + p + ": corrupt config");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw Error("checkpoint " + p + ": truncated");

  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint " + p + ": bad config: " + e.what());
  }
  const auto count = get<std::uint32_t>(in, p);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string group = get_string(in, p);
    std::string name = get_string(in, p);
    const auto rank = get<std::uint32_t>(in, p);
    if (rank > 8) throw Error("checkpoint " + p + ": corrupt tensor " + name);
    nn::Shape shape(rank);
    for (auto& d : shape) d = get<std::int32_t>(in, p);
    std::vector<double> values(nn::numel(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw Error("checkpoint " + p + ": truncated tensor " + name);
    auto it = std::find_if(ckpt.groups.begin(), ckpt.groups.end(),
                           [&](const auto& g) { return g.first == group; });
    if (it == ckpt.groups.end()) it = ckpt.groups.insert(ckpt.groups.end(), {group, {}});
    it->second.push_back({std::move(name), nn::Tensor::from(std::move(shape), std::move(values))});
  }
  return ckpt;
}

GroupedTensors model_state(const SpeakerModel& model, const AamSoftmaxHead* head) {
  GroupedTensors groups = model.parameter_groups();
  groups.emplace_back(kGroupBuffers, model.buffers());
  if (head && head->weight.defined())
    groups.emplace_back(kGroupClassifier, nn::TensorList{{"aam.weight", head->weight}});
  return groups;
}

void load_model_state(const SpeakerModel& model, const Checkpoint& ckpt) {
  for (auto& [group, list] : model_state(model))
    for (const auto& [name, t] : list) {
      const nn::Tensor* src = ckpt.find(group, name);
      if (!src) throw Error("incompatible checkpoint: missing " + group + "/" + name);
      if (src->shape() != t.shape())
        throw Error("incompatible checkpoint: " + group + "/" + name + " has shape " +
                    nn::shape_str(src->shape()) + ", model expects " + nn::shape_str(t.shape()));
      nn::Tensor dst = t;
      std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
    }
}

}  // namespace mrsv
