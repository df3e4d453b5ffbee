#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pmdef/tensor.hpp"

namespace pmdef {

// Images are N x H x W x C with values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::size_t num_classes = 10;
  bool standardize_per_image = false;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  void validate() const;
  Dataset subset(std::size_t begin, std::size_t end) const;
};

// Big-endian IDX pair (images magic 0x00000803, labels 0x00000801).
Dataset parse_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx_bytes(const std::vector<char>& images, const std::vector<char>& labels, const std::string& name);
// Pixels are quantised with round(v * 255).
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);
std::pair<std::vector<char>, std::vector<char>> encode_idx(const Dataset& data);

// CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixel bytes.
Dataset parse_cifar_binary(std::span<const std::filesystem::path> paths);
Dataset parse_cifar_bytes(const std::vector<char>& bytes, const std::string& name);
std::vector<char> encode_cifar(const Dataset& data);

enum class SynthKind { blobs, rings, glyphs };
SynthKind synth_kind_from_string(const std::string& s);
std::string to_string(SynthKind kind);

// Class-conditional patterns with seeded pixel noise: a Gaussian blob at a
// class-specific grid position, a centred ring whose thickness encodes the
// class, or a jittered seven-segment digit (at most 10 classes). Labels are
// balanced and shuffled.
Dataset synth_dataset(SynthKind kind, std::size_t n, std::size_t image_size, std::size_t num_classes,
                      std::uint64_t seed);

}  // namespace pmdef
