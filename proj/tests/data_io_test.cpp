// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "spnet/data.hpp"

namespace spnet::data {
namespace {

SyntheticOptions small(std::uint64_t seed = 0, std::size_t count = 203) {
  SyntheticOptions o;
  o.count = count;
  o.seed = seed;
  return o;
}

std::string expect_format_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  ADD_FAILURE() << "decode accepted a malformed file";
  return "";
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  EXPECT_EQ(encode(generate_synthetic(small(5))), encode(generate_synthetic(small(5))));
  EXPECT_NE(encode(generate_synthetic(small(5))), encode(generate_synthetic(small(6))));
}

TEST(Synthetic, LabelsAreBalanced) {
  for (std::size_t classes : {2u, 3u, 4u, 7u}) {
    auto o = small(1, 203);
    o.classes = classes;
    const auto d = generate_synthetic(o);
    std::map<int, std::size_t> counts;
    for (auto l : d.labels) ++counts[l];
    ASSERT_EQ(counts.size(), classes);
    for (auto [label, c] : counts) {
      EXPECT_GE(c, 203 / classes);
      EXPECT_LE(c, (203 + classes - 1) / classes);
    }
  }
  auto bad = small();
  bad.classes = 1;
  EXPECT_THROW(generate_synthetic(bad), ValueError);
}

TEST(Synthetic, StoredStatisticsStandardizeTheData) {
  const auto d = generate_synthetic(small(2, 400));
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto x = d.images(all);
  const auto plane = d.height * d.width;
  for (std::size_t c = 0; c < d.channels; ++c) {
    double s = 0, sq = 0;
    for (std::size_t n = 0; n < d.size(); ++n) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = x.ptr()[(n * d.channels + c) * plane + p];
        s += v;
        sq += v * v;
      }
    }
    const double cnt = static_cast<double>(d.size() * plane);
    EXPECT_NEAR(s / cnt, 0.0, 1e-4);
    EXPECT_NEAR(sq / cnt, 1.0, 1e-3);
  }
}

TEST(DatasetFile, RoundTripsThroughDisk) {
  const auto d = generate_synthetic(small(3, 50));
  const auto path = (std::filesystem::temp_directory_path() / "spnet_data_io_test.spds").string();
  write_dataset(path, d);
  const auto back = read_dataset(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.mean, d.mean);
  EXPECT_EQ(back.stddev, d.stddev);
  EXPECT_EQ(encode(back), encode(d));
}

TEST(DatasetFile, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode(generate_synthetic(small(0, 2)));
  ASSERT_GE(bytes.size(), 17u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SPDS");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), 1);
  EXPECT_EQ(bytes[6] | (bytes[7] << 8) | (bytes[8] << 16) | (bytes[9] << 24), 2);
  EXPECT_EQ(bytes[10], 3);
  EXPECT_EQ(bytes[11] | (bytes[12] << 8), 9);
  EXPECT_EQ(bytes[13] | (bytes[14] << 8), 9);
  EXPECT_EQ(bytes[15] | (bytes[16] << 8), 4);
  EXPECT_EQ(bytes.size(), 17u + 3 * 8 + 2 * (2 + 243));
}

TEST(DatasetFile, EachCorruptionHasItsOwnDiagnostic) {
  const auto good = encode(generate_synthetic(small(4, 10)));

  auto magic = good;
  magic[0] = 'X';
  EXPECT_NE(expect_format_error(magic).find("bad magic"), std::string::npos);

  auto other = good;
  std::copy_n("SPCK", 4, other.begin());
  EXPECT_NE(expect_format_error(other).find("checkpoint"), std::string::npos);

  auto version = good;
  version[4] = 9;
  EXPECT_NE(expect_format_error(version).find("unsupported version 9"), std::string::npos);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_NE(expect_format_error(truncated).find("truncated"), std::string::npos);
  EXPECT_NE(expect_format_error({good.begin(), good.begin() + 7}).find("truncated"), std::string::npos);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_NE(expect_format_error(trailing).find("trailing"), std::string::npos);

  auto label = good;
  label[17 + 24] = 200;  // first record's label
  EXPECT_NE(expect_format_error(label).find("num_classes"), std::string::npos);

  EXPECT_THROW(read_dataset("/nonexistent/spnet.spds"), FormatError);
}

TEST(Split, LastFractionIsValidation) {
  const auto d = generate_synthetic(small(0, 101));
  const auto [train, val] = split_validation(d, 0.2);
  EXPECT_EQ(val.size(), 20u);
  EXPECT_EQ(train.size(), 81u);
  EXPECT_EQ(val.labels.front(), d.labels[81]);
  EXPECT_EQ(val.mean, d.mean);
  EXPECT_THROW(split_validation(d, 0.0), ConfigError);
  EXPECT_THROW(split_validation(d, 1.0), ConfigError);
  EXPECT_THROW(split_validation(d, 0.001), ConfigError);
}

TEST(Augment, DisabledIsIdentityAndShapeIsPreserved) {
  Rng rng(7);
  const auto x = testing::random_tensor<float>(Shape{6, 3, 9, 9}, rng);
  auto y = x;
  Rng a(1);
  augment(y, a, false);
  EXPECT_EQ(y, x);
  augment(y, a, true);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_NE(y, x);
  EXPECT_THROW(augment(y = Tensor<float>(Shape{3, 9, 9}), a), ShapeError);
}

TEST(Augment, FlipIsAnInvolutionAndShiftZeroFills) {
  Rng rng(8);
  const auto x = testing::random_tensor<float>(Shape{2, 3, 5, 7}, rng);
  auto y = x;
  flip_horizontal(y, 1);
  EXPECT_NE(y, x);
  EXPECT_EQ(y.at(1, 2, 3, 0), x.at(1, 2, 3, 6));
  flip_horizontal(y, 1);
  EXPECT_EQ(y, x);

  shift(y, 0, 1, -2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t col = 0; col < 7; ++col) {
        const bool inside = r + 1 < 5 && col >= 2;
        const float want = inside ? x.at(0, c, r + 1, col - 2) : 0.0f;
        EXPECT_EQ(y.at(0, c, r, col), want);
      }
    }
  }
  shift(y, 1, 0, 0);
  for (std::size_t i = x.size() / 2; i < x.size(); ++i) EXPECT_EQ(y.ptr()[i], x.ptr()[i]);
}

TEST(EpochOrder, DeterministicPermutationPerEpoch) {
  const auto a = epoch_order(100, 3, 4);
  EXPECT_EQ(a, epoch_order(100, 3, 4));
  EXPECT_NE(a, epoch_order(100, 3, 5));
  EXPECT_NE(a, epoch_order(100, 4, 4));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

}  // namespace
}  // namespace spnet::data
