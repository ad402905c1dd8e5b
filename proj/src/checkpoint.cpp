#include "dpcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dpcl/common.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'C', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

std::vector<std::int64_t> shape_of(const torch::Tensor& t) { return t.sizes().vec(); }

// Section element types on disk.
enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

Dtype dtype_tag(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat64: return Dtype::f64;
    case torch::kInt64: return Dtype::i64;
    default: return Dtype::f32;
  }
}

}  // namespace

void Checkpoint::put(const std::string& name, const torch::Tensor& tensor) {
  auto t = tensor.detach().to(torch::kCPU);
  const auto tag = dtype_tag(t);
  if (tag == Dtype::f32) t = t.to(torch::kFloat32);
  sections_[name] = t.contiguous().clone();
}

torch::Tensor Checkpoint::get(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end()) throw StateError("checkpoint: missing section '" + name + "'");
  return it->second;
}

void Checkpoint::put_module(const std::string& prefix, const torch::nn::Module& module) {
  auto& layers = header_["layers"][prefix];
  for (const auto& p : module.named_parameters(true)) {
    put(prefix + "/" + p.key(), p.value());
    layers[p.key()] = shape_of(p.value());
  }
  for (const auto& b : module.named_buffers(true)) {
    put(prefix + "/" + b.key(), b.value());
    layers[b.key()] = shape_of(b.value());
  }
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto assign = [&](const std::string& key, torch::Tensor& dst) {
    auto src = get(prefix + "/" + key);
    if (src.sizes() != dst.sizes())
      throw ShapeError("checkpoint: shape mismatch for '" + prefix + "/" + key + "'");
    dst.copy_(src.to(dst.dtype()));
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
  nlohmann::json header = header_;
  header["format_version"] = kCheckpointVersion;
  const std::string text = header.dump();
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, tensor] : sections_) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.dim()));
    for (auto d : tensor.sizes()) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    const auto tag = dtype_tag(tensor);
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(tag));
    if (tag == Dtype::f32) {
      const float* data = tensor.data_ptr<float>();
      for (std::int64_t i = 0; i < tensor.numel(); ++i) write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(data[i]));
    } else if (tag == Dtype::f64) {
      const double* data = tensor.data_ptr<double>();
      for (std::int64_t i = 0; i < tensor.numel(); ++i) write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(data[i]));
    } else {
      const std::int64_t* data = tensor.data_ptr<std::int64_t>();
      for (std::int64_t i = 0; i < tensor.numel(); ++i) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(data[i]));
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported format_version " + std::to_string(version));
  Checkpoint ckpt;
  const auto header_len = read_le<std::uint32_t>(is);
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  ckpt.header_ = nlohmann::json::parse(text);
  const auto n = read_le<std::uint32_t>(is);
  for (std::uint32_t s = 0; s < n; ++s) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = read_le<std::uint32_t>(is);
    std::vector<std::int64_t> dims;
    for (std::uint32_t d = 0; d < ndim; ++d) dims.push_back(static_cast<std::int64_t>(read_le<std::uint64_t>(is)));
    torch::Tensor t;
    switch (static_cast<Dtype>(read_le<std::uint8_t>(is))) {
      case Dtype::f32: {
        t = torch::empty(dims, torch::kFloat32);
        float* data = t.data_ptr<float>();
        for (std::int64_t i = 0; i < t.numel(); ++i) data[i] = std::bit_cast<float>(read_le<std::uint32_t>(is));
        break;
      }
      case Dtype::f64: {
        t = torch::empty(dims, torch::kFloat64);
        double* data = t.data_ptr<double>();
        for (std::int64_t i = 0; i < t.numel(); ++i) data[i] = std::bit_cast<double>(read_le<std::uint64_t>(is));
        break;
      }
      case Dtype::i64: {
        t = torch::empty(dims, torch::kInt64);
        std::int64_t* data = t.data_ptr<std::int64_t>();
        for (std::int64_t i = 0; i < t.numel(); ++i) data[i] = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
        break;
      }
      default: throw std::runtime_error("checkpoint: unknown section dtype in " + path.string());
    }
    ckpt.sections_[name] = t;
  }
  return ckpt;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 0;
  auto mix = [&](const std::string& name, const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    std::uint64_t local = splitmix64(std::hash<std::string>{}(name));
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto nbytes = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < nbytes; ++i) local = splitmix64(local ^ bytes[i]);
    h ^= local;
  };
  for (const auto& p : module.named_parameters(true)) mix(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) mix(b.key(), b.value());
  return h;
}

}  // namespace dpcl
