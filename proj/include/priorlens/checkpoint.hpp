#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

// Versioned parameter container shared by teacher, student and deblur
// checkpoints.
//
// Layout (little-endian):
//   8 bytes   magic "PRLNSCK\0"
//   uint32    format_version
//   uint64    header byte length
//   header    UTF-8 JSON; its "tensors" array lists {name, dtype, shape,
//             offset, nbytes} relative to the start of the blob
//   blob      raw contiguous tensor data
namespace priorlens::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

class Container {
 public:
  nlohmann::json header = nlohmann::json::object();

  void add(const std::string& name, const torch::Tensor& tensor);
  bool has(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
};

// Parameters and buffers of `module` are stored as "<prefix><name>".
void export_module(Container& c, const torch::nn::Module& module, const std::string& prefix);
// Copies stored values into the module in place; shapes must match exactly.
void import_module(const Container& c, torch::nn::Module& module, const std::string& prefix);

// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_checksum(const torch::nn::Module& module);

// FNV-1a of a string, rendered as 16 hex digits.
std::string digest_hex(const std::string& text);

}  // namespace priorlens::checkpoint
