#include "pmdef/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "pmdef/binary_io.hpp"
#include "pmdef/error.hpp"

namespace pmdef {
namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * 3;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::uint32_t be32(const std::vector<char>& b, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[offset + i]);
  return v;
}

void put_be32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

char quantise(double v) { return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))); }

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError(name + ": images must be N x H x W x C, got " + to_string(images.shape()));
  if (images.batch() != labels.size())
    throw DataError(name + ": " + std::to_string(images.batch()) + " images but " + std::to_string(labels.size()) +
                    " labels");
  for (double v : images.values())
    if (!(v >= 0.0 && v <= 1.0)) throw DataError(name + ": pixel value outside [0, 1]");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw DataError(name + ": label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  Dataset out;
  out.images = images.rows(begin, end);
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.name = name;
  out.num_classes = num_classes;
  out.standardize_per_image = standardize_per_image;
  return out;
}

Dataset parse_idx_bytes(const std::vector<char>& img, const std::vector<char>& lab, const std::string& name) {
  if (img.size() < 4) throw TruncationError(name + ": image file shorter than its magic");
  if (be32(img, 0) != kIdxImages)
    throw MagicError(name + ": image file magic 0x" + [&] {
      char buf[9];
      std::snprintf(buf, sizeof buf, "%08x", be32(img, 0));
      return std::string(buf);
    }() + ", expected 0x00000803");
  if (lab.size() < 4) throw TruncationError(name + ": label file shorter than its magic");
  if (be32(lab, 0) != kIdxLabels) throw MagicError(name + ": label file magic is not 0x00000801");
  if (img.size() < 16) throw TruncationError(name + ": image header truncated at byte " + std::to_string(img.size()));
  if (lab.size() < 8) throw TruncationError(name + ": label header truncated at byte " + std::to_string(lab.size()));

  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n == 0 || rows == 0 || cols == 0) throw DataError(name + ": zero-sized IDX dimension");
  if (n != n_labels)
    throw CountMismatchError(name + ": " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  if (img.size() != 16 + n * rows * cols)
    throw TruncationError(name + ": image payload has " + std::to_string(img.size() - 16) + " bytes, header needs " +
                          std::to_string(n * rows * cols));
  if (lab.size() != 8 + n)
    throw TruncationError(name + ": label payload has " + std::to_string(lab.size() - 8) + " bytes, header needs " +
                          std::to_string(n));

  Dataset d;
  d.name = name;
  d.images = Tensor({n, rows, cols, 1});
  for (std::size_t i = 0; i < n * rows * cols; ++i)
    d.images[i] = static_cast<double>(static_cast<unsigned char>(img[16 + i])) / 255.0;
  d.labels.resize(n);
  int top = 0;
  for (std::size_t i = 0; i < n; ++i) top = std::max(top, d.labels[i] = static_cast<unsigned char>(lab[8 + i]));
  d.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(top) + 1);
  return d;
}

Dataset parse_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx_bytes(read_file(images), read_file(labels), images.filename().string());
}

std::pair<std::vector<char>, std::vector<char>> encode_idx(const Dataset& data) {
  if (data.images.rank() != 4 || data.images.dim(3) != 1)
    throw DataError("IDX export needs single-channel N x H x W x 1 images");
  std::vector<char> img, lab;
  put_be32(img, kIdxImages);
  put_be32(img, static_cast<std::uint32_t>(data.images.dim(0)));
  put_be32(img, static_cast<std::uint32_t>(data.images.dim(1)));
  put_be32(img, static_cast<std::uint32_t>(data.images.dim(2)));
  for (double v : data.images.values()) img.push_back(quantise(v));
  put_be32(lab, kIdxLabels);
  put_be32(lab, static_cast<std::uint32_t>(data.labels.size()));
  for (int l : data.labels) lab.push_back(static_cast<char>(l));
  return {img, lab};
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto [img, lab] = encode_idx(data);
  write_file(images, img);
  write_file(labels, lab);
}

Dataset parse_cifar_bytes(const std::vector<char>& bytes, const std::string& name) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw TruncationError(name + ": length " + std::to_string(bytes.size()) + " is not a multiple of 3073; record " +
                          std::to_string(bytes.size() / kCifarRecord) + " truncated at byte offset " +
                          std::to_string(bytes.size() / kCifarRecord * kCifarRecord));
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d;
  d.name = name;
  d.num_classes = 10;
  d.standardize_per_image = true;
  d.images = Tensor({n, kCifarSide, kCifarSide, 3});
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * kCifarRecord;
    const int label = static_cast<unsigned char>(bytes[base]);
    if (label > 9)
      throw LabelRangeError(name + ": label " + std::to_string(label) + " at byte offset " + std::to_string(base) +
                            " outside [0, 9]");
    d.labels[r] = label;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < kCifarSide * kCifarSide; ++p)
        d.images[(r * kCifarSide * kCifarSide + p) * 3 + c] =
            static_cast<double>(static_cast<unsigned char>(bytes[base + 1 + c * kCifarSide * kCifarSide + p])) / 255.0;
  }
  return d;
}

Dataset parse_cifar_binary(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw DataError("no CIFAR files given");
  std::vector<Dataset> parts;
  for (const auto& p : paths) parts.push_back(parse_cifar_bytes(read_file(p), p.filename().string()));
  Dataset d = parts[0];
  if (parts.size() > 1) {
    std::vector<Tensor> images;
    d.labels.clear();
    for (auto& part : parts) {
      images.push_back(std::move(part.images));
      d.labels.insert(d.labels.end(), part.labels.begin(), part.labels.end());
    }
    d.images = concat_rows(images);
  }
  return d;
}

std::vector<char> encode_cifar(const Dataset& data) {
  if (data.images.rank() != 4 || data.images.dim(1) != kCifarSide || data.images.dim(2) != kCifarSide ||
      data.images.dim(3) != 3)
    throw DataError("CIFAR export needs N x 32 x 32 x 3 images");
  std::vector<char> out;
  out.reserve(data.size() * kCifarRecord);
  for (std::size_t r = 0; r < data.size(); ++r) {
    out.push_back(static_cast<char>(data.labels[r]));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < kCifarSide * kCifarSide; ++p)
        out.push_back(quantise(data.images[(r * kCifarSide * kCifarSide + p) * 3 + c]));
  }
  return out;
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "blobs") return SynthKind::blobs;
  if (s == "glyphs") return SynthKind::glyphs;
  if (s == "rings") return SynthKind::rings;
  throw ParameterError("unknown synthetic dataset kind '" + s + "'");
}

namespace {

// Seven-segment strokes a..g as (x0, y0, x1, y1) in a unit box, y down.
constexpr double kSegments[7][4] = {{0, 0, 1, 0},     {1, 0, 1, 0.5}, {1, 0.5, 1, 1}, {0, 1, 1, 1},
                                    {0, 0.5, 0, 1}, {0, 0, 0, 0.5}, {0, 0.5, 1, 0.5}};
constexpr const char* kDigitSegments[10] = {"abcdef", "bc",   "abged", "abgcd",   "fgbc",
                                            "afgcd",  "afgedc", "abc", "abcdefg", "abcdfg"};

double segment_distance(double px, double py, const double* s) {
  const double vx = s[2] - s[0], vy = s[3] - s[1];
  const double len2 = vx * vx + vy * vy;
  const double t = std::clamp(((px - s[0]) * vx + (py - s[1]) * vy) / len2, 0.0, 1.0);
  const double dx = px - (s[0] + t * vx), dy = py - (s[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void draw_glyph(double* img, std::size_t image_size, std::size_t digit, double amplitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = static_cast<double>(image_size);
  const double width = side * (0.38 + 0.1 * unit(rng)), height = side * (0.6 + 0.1 * unit(rng));
  const double left = (side - width) / 2.0 + (unit(rng) - 0.5) * 2.0;
  const double top = (side - height) / 2.0 + (unit(rng) - 0.5) * 2.0;
  const double slant = (unit(rng) - 0.5) * 0.3;
  const double stroke = side * (0.06 + 0.04 * unit(rng));
  std::vector<std::array<double, 4>> strokes;
  for (const char* p = kDigitSegments[digit]; *p; ++p) {
    const double* s = kSegments[*p - 'a'];
    std::array<double, 4> seg{};
    for (int k = 0; k < 2; ++k) {
      const double y = top + s[2 * k + 1] * height;
      seg[2 * k] = left + s[2 * k] * width + slant * (y - side / 2.0);
      seg[2 * k + 1] = y;
    }
    strokes.push_back(seg);
  }
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& seg : strokes)
        d = std::min(d, segment_distance(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, seg.data()));
      const double outside = std::max(0.0, d - stroke / 2.0);
      img[y * image_size + x] = amplitude * std::exp(-outside * outside / 0.5);
    }
}

}  // namespace

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::blobs:
      return "blobs";
    case SynthKind::rings:
      return "rings";
    case SynthKind::glyphs:
      return "glyphs";
  }
  return "blobs";
}

Dataset synth_dataset(SynthKind kind, std::size_t n, std::size_t image_size, std::size_t num_classes,
                      std::uint64_t seed) {
  if (num_classes < 2) throw ParameterError("synthetic dataset needs at least two classes");
  if (n < num_classes) throw ParameterError("synthetic dataset needs n >= number of classes");
  if (image_size < 8) throw ParameterError("synthetic images must be at least 8 x 8");
  if (kind == SynthKind::glyphs && num_classes > 10) throw ParameterError("glyph datasets have at most 10 classes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.08);

  Dataset d;
  d.name = "synthetic-" + to_string(kind);
  d.num_classes = num_classes;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % num_classes);
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  const double side = static_cast<double>(image_size);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
  const auto rows = (num_classes + cols - 1) / cols;
  d.images = Tensor({n, image_size, image_size, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(d.labels[i]);
    const double amplitude = 0.7 + 0.3 * unit(rng);
    double* img = d.images.data() + i * image_size * image_size;
    if (kind == SynthKind::blobs) {
      const double cx = (static_cast<double>(c % cols) + 0.5) / static_cast<double>(cols) * side + (unit(rng) - 0.5);
      const double cy = (static_cast<double>(c / cols) + 0.5) / static_cast<double>(rows) * side + (unit(rng) - 0.5);
      const double sigma = side / (3.0 * static_cast<double>(cols)) * (0.8 + 0.4 * unit(rng));
      for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
          img[y * image_size + x] = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    } else if (kind == SynthKind::glyphs) {
      draw_glyph(img, image_size, c, amplitude, rng);
    } else {
      const double radius = side * (0.28 + 0.04 * unit(rng));
      const double thickness = 0.6 + 2.4 * static_cast<double>(c) / static_cast<double>(num_classes - 1);
      const double cx = side / 2.0 + (unit(rng) - 0.5), cy = side / 2.0 + (unit(rng) - 0.5);
      for (std::size_t y = 0; y < image_size; ++y)
        for (std::size_t x = 0; x < image_size; ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
          const double dist = std::abs(std::sqrt(dx * dx + dy * dy) - radius);
          img[y * image_size + x] = amplitude * std::exp(-(dist * dist) / (2.0 * 0.25 * thickness * thickness));
        }
    }
    for (std::size_t p = 0; p < image_size * image_size; ++p)
      img[p] = std::clamp(img[p] + noise(rng), 0.0, 1.0);
  }
  return d;
}

}  // namespace pmdef
