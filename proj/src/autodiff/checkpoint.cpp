#include "fundus/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "fundus/error.hpp"

namespace fundus::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

constexpr char kMagic[8] = {'F', 'U', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  void read(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::CorruptFile, origin_ + ": truncated checkpoint");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, sizeof(v));
    return v;
  }

 private:
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

template <typename T>
std::string serialize_checkpoint(const ParamList<T>& params) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, sizeof(T));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    auto v = p.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  }
  return out;
}

template <typename T>
void save_checkpoint(const ParamList<T>& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

template <typename T>
ParamList<T> read_checkpoint(const std::filesystem::path& path) {
  Reader in(slurp(path), path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a checkpoint");
  }
  if (in.u32() != kVersion) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": unknown checkpoint version");
  }
  if (in.u32() != sizeof(T)) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + ": checkpoint scalar width differs");
  }
  const std::uint32_t count = in.u32();
  ParamList<T> params;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(in.u32(), '\0');
    in.read(name.data(), name.size());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw Error(ErrorCode::CorruptFile, path.string() + ": implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(in.u32());
    std::vector<T> values(shape_numel(shape));
    in.read(values.data(), values.size() * sizeof(T));
    params.push_back({std::move(name), BasicTensor<T>::from(std::move(shape), std::move(values), true)});
  }
  return params;
}

template <typename T>
void load_checkpoint_into(ParamList<T>& params, const std::filesystem::path& path) {
  std::map<std::string, BasicTensor<T>> stored;
  for (auto& p : read_checkpoint<T>(path)) stored.emplace(p.name, p.tensor);
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": missing tensor " + p.name);
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + ": tensor " + p.name + " has shape " +
                                                shape_str(it->second.shape()) + ", expected " +
                                                shape_str(p.tensor.shape()));
    }
    std::copy(it->second.values().begin(), it->second.values().end(), p.tensor.values().begin());
  }
}

#define FUNDUS_INSTANTIATE_CKPT(T)                                                    \
  template std::string serialize_checkpoint(const ParamList<T>&);                     \
  template void save_checkpoint(const ParamList<T>&, const std::filesystem::path&);   \
  template ParamList<T> read_checkpoint(const std::filesystem::path&);                \
  template void load_checkpoint_into(ParamList<T>&, const std::filesystem::path&);

FUNDUS_INSTANTIATE_CKPT(float)
FUNDUS_INSTANTIATE_CKPT(double)

}  // namespace fundus::ad
