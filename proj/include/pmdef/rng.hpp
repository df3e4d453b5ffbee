#pragma once

#include <cstdint>
#include <string_view>

namespace pmdef {

// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent child seed for stream `counter` of `root`.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter) {
  return mix64(mix64(root) ^ mix64(counter + 0x632be59bd9b4e019ULL));
}

// Child seed keyed by a stage name (FNV-1a of the name as the counter).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(root, h);
}

}  // namespace pmdef
