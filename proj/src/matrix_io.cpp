#include "mrsv/matrix_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "mrsv/common.hpp"

namespace mrsv {

namespace {
constexpr char kMagic[8] = {'M', 'R', 'S', 'V', 'M', 'A', 'T', '1'};
constexpr std::uint32_t kFloat64 = 1;
}  // namespace

void write_matrix(const std::filesystem::path& path, const nn::Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, 8);
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (int d : t.shape()) {
    const std::int32_t v = d;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  out.write(reinterpret_cast<const char*>(&kFloat64), 4);
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

nn::Tensor read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  std::uint32_t rank = 0, dtype = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) ||
      !in.read(reinterpret_cast<char*>(&rank), 4) || rank > 8)
    throw Error("not a matrix file: " + path.string());
  nn::Shape shape(rank);
  for (auto& d : shape) {
    std::int32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4) || v < 0)
      throw Error("corrupt matrix header: " + path.string());
    d = v;
  }
  if (!in.read(reinterpret_cast<char*>(&dtype), 4) || dtype != kFloat64)
    throw Error("unsupported matrix dtype in " + path.string());
  std::vector<double> values(nn::numel(shape));
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double))))
    throw Error("truncated matrix payload: " + path.string());
  return nn::Tensor::from(std::move(shape), std::move(values));
}

}  // namespace mrsv
