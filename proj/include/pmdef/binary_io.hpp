#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmdef/tensor.hpp"

namespace pmdef {

// File layout shared by checkpoints and adversarial batches:
//   8-byte magic | u64 LE header length | UTF-8 JSON header | f64 LE blocks
// The header's "tensors" array lists name, shape, byte offset and element
// count of each block, in file order.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Container {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
};

std::vector<char> encode_container(std::string_view magic, nlohmann::json header, const std::vector<NamedTensor>& tensors);
Container decode_container(std::string_view magic, const std::vector<char>& bytes, const std::string& source);

void write_container(const std::filesystem::path& path, std::string_view magic, nlohmann::json header,
                     const std::vector<NamedTensor>& tensors);
Container read_container(const std::filesystem::path& path, std::string_view magic);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pmdef
