#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "dvplab/rng.hpp"

namespace {

using dvp::RngStream;
using dvp::philox::Counter;

// Known-answer vectors published with Random123 (kat_vectors, philox4x32 10).
TEST(Philox, KnownAnswerVectors) {
  EXPECT_EQ(dvp::philox::philox4x32_10({0, 0, 0, 0}, {0, 0}),
            (Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(dvp::philox::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                       {0xffffffffu, 0xffffffffu}),
            (Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(dvp::philox::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                       {0xa4093822u, 0x299f31d0u}),
            (Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RngStream, SameSeedAndStreamReproduce) {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, DistinctStreamsDiffer) {
  RngStream a(42, 7), b(42, 8), c(43, 7);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(RngStream, DeriveIsPureFunctionOfParentIdentity) {
  RngStream parent(5, 11);
  parent.next_u64();  // position must not matter
  RngStream d1 = parent.derive(3);
  RngStream d2 = RngStream(5, 11).derive(3);
  for (int i = 0; i < 16; ++i) ASSERT_EQ(d1.next_u64(), d2.next_u64());
  std::set<std::uint64_t> ids;
  for (std::uint64_t s = 0; s < 1000; ++s) ids.insert(parent.derive(s).stream_id());
  EXPECT_EQ(ids.size(), 1000u);
}

TEST(RngStream, UniformInUnitInterval) {
  RngStream r(1, 1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // mean 1/2, sd of the mean sqrt(1/12/n) ~ 6.5e-4
  EXPECT_NEAR(sum / n, 0.5, 4 * 6.5e-4);
}

TEST(RngStream, NormalMoments) {
  RngStream r(2, 3);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s1 / n, 0.0, 4 * std::sqrt(1.0 / n));
  EXPECT_NEAR(s2 / n, 1.0, 4 * std::sqrt(2.0 / n));
}

TEST(RngStream, BelowCoversRange) {
  RngStream r(9, 9);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) counts[r.below(5)]++;
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

}  // namespace
