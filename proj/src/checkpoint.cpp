#include "priorlens/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "priorlens/error.hpp"

namespace priorlens::checkpoint {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'R', 'L', 'N', 'S', 'C', 'K', '\0'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw ValidationError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw ValidationError("unknown tensor dtype '" + s + "' in checkpoint");
}

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

void Container::add(const std::string& name, const torch::Tensor& tensor) {
  if (has(name)) throw ValidationError("duplicate checkpoint tensor: " + name);
  tensors_.emplace_back(name, tensor.detach().to(torch::kCPU).contiguous().clone());
}

bool Container::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const torch::Tensor& Container::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw ValidationError("checkpoint is missing tensor: " + name);
}

void Container::save(const std::filesystem::path& path) const {
  nlohmann::json h = header;
  h["format_version"] = kFormatVersion;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors_) {
    const std::uint64_t nbytes = t.numel() * t.element_size();
    table.push_back({{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
                     {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  h["tensors"] = table;
  const std::string text = h.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint: " + path.string());
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t header_len = text.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors_)
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
  if (!out) throw RuntimeFailure("short write on checkpoint: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic.data(), magic.size());
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || magic != kMagic) throw ValidationError("not a priorlens checkpoint: " + path.string());
  if (version != kFormatVersion)
    throw ValidationError("unsupported checkpoint format version " + std::to_string(version));
  if (header_len > (1ULL << 30)) throw ValidationError("corrupt checkpoint header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError("truncated checkpoint header");

  Container c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto blob_start = in.tellg();
  for (const auto& entry : c.header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype").get<std::string>())));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
      throw ValidationError("checkpoint tensor size mismatch: " + entry.at("name").get<std::string>());
    in.seekg(blob_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw ValidationError("truncated checkpoint blob");
    c.tensors_.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  c.header.erase("tensors");
  return c;
}

void export_module(Container& c, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters(true)) c.add(prefix + item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) c.add(prefix + item.key(), item.value());
}

void import_module(const Container& c, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = c.get(prefix + key);
    if (src.sizes() != dst.sizes()) throw ValidationError("checkpoint shape mismatch for " + prefix + key);
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& item : module.named_parameters(true)) copy_into(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) copy_into(item.key(), item.value());
}

std::uint64_t parameter_checksum(const torch::nn::Module& module) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : module.parameters(true)) {
    auto t = p.detach().to(torch::kCPU).contiguous();
    h = fnv1a(t.data_ptr(), t.numel() * t.element_size(), h);
  }
  return h;
}

std::string digest_hex(const std::string& text) {
  const std::uint64_t h = fnv1a(text.data(), text.size(), kFnvOffset);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace priorlens::checkpoint
