#include "pmdef/binary_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "pmdef/error.hpp"

namespace pmdef {
namespace {

void put_u64(std::vector<char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::vector<char>& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace

const Tensor& Container::get(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw ParseError("container has no tensor named '" + std::string(name) + "'");
}

bool Container::contains(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::vector<char> encode_container(std::string_view magic, nlohmann::json header,
                                   const std::vector<NamedTensor>& tensors) {
  if (magic.size() != 8) throw ContractError("container magic must be 8 bytes");
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}, {"count", t.tensor.size()}});
    offset += 8 * t.tensor.size();
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();

  std::vector<char> out(magic.begin(), magic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : tensors)
    for (double v : t.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Container decode_container(std::string_view magic, const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() < 8 || !std::equal(magic.begin(), magic.end(), bytes.begin()))
    throw MagicError(source + ": bad magic, expected '" + std::string(magic) + "'");
  if (bytes.size() < 16) throw TruncationError(source + ": truncated before header length");
  const auto header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16)
    throw TruncationError(source + ": header of " + std::to_string(header_len) + " bytes runs past end of file at " +
                          std::to_string(bytes.size()));

  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": malformed header: " + e.what());
  }
  const std::size_t data_start = 16 + header_len;
  const std::size_t data_len = bytes.size() - data_start;

  try {
    std::uint64_t expected = 0;
    for (const auto& entry : c.header.at("tensors")) {
      const auto shape = entry.at("shape").get<Shape>();
      const auto count = entry.at("count").get<std::uint64_t>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (shape_size(shape) != count)
        throw LengthMismatchError(source + ": tensor '" + entry.at("name").get<std::string>() + "' shape " +
                                  to_string(shape) + " disagrees with count " + std::to_string(count));
      if (offset != expected)
        throw LengthMismatchError(source + ": tensor '" + entry.at("name").get<std::string>() +
                                  "' offset out of sequence");
      if (offset + 8 * count > data_len)
        throw TruncationError(source + ": tensor '" + entry.at("name").get<std::string>() + "' truncated at byte " +
                              std::to_string(bytes.size()));
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<double>(get_u64(bytes, data_start + offset + 8 * i));
      c.tensors.push_back({entry.at("name").get<std::string>(), Tensor(shape, std::move(values))});
      expected = offset + 8 * count;
    }
    if (expected != data_len)
      throw LengthMismatchError(source + ": " + std::to_string(data_len - expected) +
                                " trailing bytes after the last tensor");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": malformed tensor table: " + e.what());
  }
  return c;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

void write_container(const std::filesystem::path& path, std::string_view magic, nlohmann::json header,
                     const std::vector<NamedTensor>& tensors) {
  write_file(path, encode_container(magic, std::move(header), tensors));
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  return decode_container(magic, read_file(path), path.string());
}

}  // namespace pmdef
