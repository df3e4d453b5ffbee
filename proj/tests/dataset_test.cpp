#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "pmdef/binary_io.hpp"
#include "pmdef/dataset.hpp"
#include "pmdef/error.hpp"
#include "pmdef/training.hpp"
#include "support.hpp"

namespace pmdef {
namespace {

void put32(std::vector<char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::vector<char> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                             const std::vector<unsigned char>& pixels) {
  std::vector<char> out;
  put32(out, magic);
  put32(out, n);
  put32(out, rows);
  put32(out, cols);
  for (auto p : pixels) out.push_back(static_cast<char>(p));
  return out;
}

std::vector<char> idx_labels(std::uint32_t magic, const std::vector<unsigned char>& labels) {
  std::vector<char> out;
  put32(out, magic);
  put32(out, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) out.push_back(static_cast<char>(l));
  return out;
}

const std::vector<unsigned char> kPixels{0, 255, 51, 102, 10, 20, 30, 40};

TEST(Idx, HandBuiltFixture) {
  auto d = parse_idx_bytes(idx_images(0x803, 2, 2, 2, kPixels), idx_labels(0x801, {7, 1}), "fixture");
  ASSERT_EQ(d.images.shape(), (Shape{2, 2, 2, 1}));
  EXPECT_EQ(d.labels, (std::vector<int>{7, 1}));
  for (std::size_t i = 0; i < kPixels.size(); ++i) EXPECT_EQ(d.images[i], kPixels[i] / 255.0);
  EXPECT_EQ(d.images[2], 0.2);
}

TEST(Idx, FilesOnDisk) {
  test::TempDir dir("idx");
  write_file(dir / "img", idx_images(0x803, 2, 2, 2, kPixels));
  write_file(dir / "lab", idx_labels(0x801, {3, 4}));
  auto d = parse_idx(dir / "img", dir / "lab");
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels[1], 4);
  EXPECT_THROW(parse_idx(dir / "missing", dir / "lab"), Error);
}

TEST(Idx, TypedErrors) {
  const auto img = idx_images(0x803, 2, 2, 2, kPixels);
  const auto lab = idx_labels(0x801, {7, 1});
  EXPECT_THROW(parse_idx_bytes(idx_images(0x801, 2, 2, 2, kPixels), lab, "f"), MagicError);
  EXPECT_THROW(parse_idx_bytes(img, idx_labels(0x803, {7, 1}), "f"), MagicError);
  EXPECT_THROW(parse_idx_bytes(img, idx_labels(0x801, {7}), "f"), CountMismatchError);
  auto short_img = img;
  short_img.pop_back();
  EXPECT_THROW(parse_idx_bytes(short_img, lab, "f"), TruncationError);
  auto short_lab = lab;
  short_lab.pop_back();
  EXPECT_THROW(parse_idx_bytes(img, short_lab, "f"), TruncationError);
  EXPECT_THROW(parse_idx_bytes(std::vector<char>(10, 0), lab, "f"), ParseError);
  EXPECT_THROW(parse_idx_bytes({}, lab, "f"), TruncationError);
  auto long_img = img;
  long_img.push_back(0);
  EXPECT_THROW(parse_idx_bytes(long_img, lab, "f"), ParseError);
}

TEST(Idx, EveryTruncationRejected) {
  const auto img = idx_images(0x803, 2, 2, 2, kPixels);
  const auto lab = idx_labels(0x801, {7, 1});
  for (std::size_t n = 0; n < img.size(); ++n)
    EXPECT_THROW(parse_idx_bytes(std::vector<char>(img.begin(), img.begin() + n), lab, "f"), ParseError) << n;
  for (std::size_t n = 0; n < lab.size(); ++n)
    EXPECT_THROW(parse_idx_bytes(img, std::vector<char>(lab.begin(), lab.begin() + n), "f"), ParseError) << n;
}

TEST(Idx, RoundTrip) {
  const auto img = idx_images(0x803, 2, 2, 2, kPixels);
  const auto lab = idx_labels(0x801, {7, 1});
  auto d = parse_idx_bytes(img, lab, "f");
  auto [img2, lab2] = encode_idx(d);
  EXPECT_EQ(img2, img);
  EXPECT_EQ(lab2, lab);
  test::TempDir dir("idxrt");
  write_idx(d, dir / "i", dir / "l");
  auto back = parse_idx(dir / "i", dir / "l");
  EXPECT_TRUE(std::ranges::equal(back.images.values(), d.images.values()));
  EXPECT_EQ(back.labels, d.labels);
}

std::vector<char> cifar_record(unsigned char label, unsigned char base) {
  std::vector<char> out{static_cast<char>(label)};
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 1024; ++p) out.push_back(static_cast<char>((base + c * 50 + p) % 256));
  return out;
}

TEST(Cifar, HandBuiltRecord) {
  auto d = parse_cifar_bytes(cifar_record(6, 3), "rec");
  ASSERT_EQ(d.images.shape(), (Shape{1, 32, 32, 3}));
  EXPECT_EQ(d.labels, std::vector<int>{6});
  for (int y : {0, 5, 31})
    for (int x : {0, 17, 31})
      for (int c = 0; c < 3; ++c) {
        const int p = y * 32 + x;
        EXPECT_EQ(d.images[(p * 3) + c], ((3 + c * 50 + p) % 256) / 255.0);
      }
}

TEST(Cifar, ErrorsAndRoundTrip) {
  auto two = cifar_record(1, 0);
  auto second = cifar_record(9, 100);
  two.insert(two.end(), second.begin(), second.end());
  auto d = parse_cifar_bytes(two, "two");
  EXPECT_EQ(d.labels, (std::vector<int>{1, 9}));
  EXPECT_EQ(encode_cifar(d), two);

  auto truncated = two;
  truncated.resize(two.size() - 100);
  try {
    parse_cifar_bytes(truncated, "t");
    ADD_FAILURE();
  } catch (const TruncationError& e) {
    EXPECT_NE(std::string(e.what()).find("3073"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  auto bad = cifar_record(10, 0);
  EXPECT_THROW(parse_cifar_bytes(bad, "b"), LabelRangeError);

  test::TempDir dir("cifar");
  write_file(dir / "a.bin", cifar_record(2, 7));
  write_file(dir / "b.bin", cifar_record(5, 9));
  const std::vector<std::filesystem::path> paths{dir / "a.bin", dir / "b.bin"};
  auto both = parse_cifar_binary(paths);
  EXPECT_EQ(both.labels, (std::vector<int>{2, 5}));
  EXPECT_THROW(parse_cifar_binary(std::vector<std::filesystem::path>{}), DataError);
}

TEST(Synth, DeterministicBalancedInDomain) {
  for (auto kind : {SynthKind::blobs, SynthKind::rings, SynthKind::glyphs}) {
    auto a = synth_dataset(kind, 103, 12, 5, 4);
    auto b = synth_dataset(kind, 103, 12, 5, 4);
    EXPECT_TRUE(std::ranges::equal(a.images.values(), b.images.values()));
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NO_THROW(a.validate());
    std::map<int, int> counts;
    for (int l : a.labels) ++counts[l];
    ASSERT_EQ(counts.size(), 5u);
    for (auto [label, n] : counts) EXPECT_NEAR(n, 103.0 / 5.0, 1.0) << to_string(kind);
    auto c = synth_dataset(kind, 103, 12, 5, 5);
    EXPECT_FALSE(std::ranges::equal(a.images.values(), c.images.values()));
    EXPECT_EQ(synth_kind_from_string(to_string(kind)), kind);
  }
  EXPECT_THROW(synth_dataset(SynthKind::blobs, 3, 8, 4, 0), ParameterError);
  EXPECT_THROW(synth_dataset(SynthKind::blobs, 30, 4, 4, 0), ParameterError);
  EXPECT_THROW(synth_dataset(SynthKind::glyphs, 30, 8, 11, 0), ParameterError);
  EXPECT_THROW(synth_kind_from_string("stripes"), ParameterError);
}

TEST(Synth, SmallMlpFitsBlobs) {
  auto d = synth_dataset(SynthKind::blobs, 400, 8, 4, 21);
  Model m = build_model(test::mlp_classifier_spec({8, 8, 1}, 32, 4), 1);
  OptimizerConfig c;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  c.epochs = 50;
  c.seed = 3;
  train_classifier(m, d.images, d.labels, c);
  EXPECT_GE(classification_accuracy(m, d.images, d.labels), 0.95);
}

TEST(DatasetType, SubsetAndValidate) {
  auto d = synth_dataset(SynthKind::rings, 20, 8, 2, 1);
  auto s = d.subset(5, 9);
  EXPECT_EQ(s.size(), 4u);
  EXPECT_EQ(s.labels[0], d.labels[5]);
  EXPECT_EQ(s.images[0], d.images[5 * 64]);
  EXPECT_EQ(s.image_shape(), (Shape{8, 8, 1}));
  auto bad = d;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), DataError);
  bad = d;
  bad.images[3] = 1.5;
  EXPECT_THROW(bad.validate(), DataError);
  bad = d;
  bad.labels[0] = 2;
  EXPECT_THROW(bad.validate(), DataError);
}

}  // namespace
}  // namespace pmdef
