#include <gtest/gtest.h>

#include <set>

#include "robustmc/digest.hpp"
#include "robustmc/io.hpp"
#include "robustmc/rng.hpp"
#include "robustmc/text.hpp"
#include "support.hpp"

using namespace robustmc;

TEST(SplitMix64, ReferenceSequenceForSeedZero) {
  SplitMix64 g(0);
  EXPECT_EQ(g.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(g.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(g.next(), 0x06c45d188009454fULL);
}

TEST(SplitMix64, BelowStaysInRange) {
  SplitMix64 g(7);
  for (std::uint64_t bound : {1ULL, 2ULL, 3ULL, 10ULL, 1000003ULL}) {
    for (int i = 0; i < 1000; ++i) EXPECT_LT(g.below(bound), bound);
  }
}

TEST(SplitMix64, DerivedStreamsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 64; ++s) seen.insert(derive_seed(42, s));
  EXPECT_EQ(seen.size(), 64u);
}

TEST(SeededPermutation, IsAPermutationAndDeterministic) {
  for (std::size_t n = 0; n < 40; ++n) {
    auto p = seeded_permutation(n, 99 + n);
    EXPECT_EQ(p, seeded_permutation(n, 99 + n));
    std::set<std::size_t> s(p.begin(), p.end());
    EXPECT_EQ(s.size(), n);
    if (n > 0) {
      EXPECT_EQ(*s.rbegin(), n - 1);
    }
  }
}

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_u64("abc"), 0xba7816bf8f01cfeaULL);
}

TEST(Spans, IntersectionRules) {
  EXPECT_TRUE(intersects({2, 4}, {3, 6}));
  EXPECT_FALSE(intersects({2, 3}, {3, 6}));
  EXPECT_FALSE(intersects({3, 3}, {3, 6}));
  EXPECT_TRUE(intersects({4, 4}, {3, 6}));
  EXPECT_FALSE(intersects({6, 6}, {3, 6}));
}

TEST(Spans, MergeAndComplementPartitionTheText) {
  testsupport::TextGen gen(5);
  for (int round = 0; round < 200; ++round) {
    const std::size_t len = gen.uniform(1, 60);
    std::vector<Span> spans;
    for (std::size_t i = gen.uniform(0, 6); i > 0; --i) {
      const auto b = gen.uniform(0, len - 1);
      spans.push_back({b, gen.uniform(b, len)});
    }
    auto merged = merge_spans(spans);
    for (std::size_t i = 1; i < merged.size(); ++i) EXPECT_LT(merged[i - 1].end, merged[i].begin);
    std::vector<int> cover(len, 0);
    for (const auto& s : merged) {
      for (auto p = s.begin; p < s.end; ++p) cover[p] += 1;
    }
    for (const auto& s : complement(merged, len)) {
      for (auto p = s.begin; p < s.end; ++p) cover[p] += 1;
    }
    std::vector<int> expect(len, 1);
    EXPECT_EQ(cover, expect);
  }
}

TEST(Text, BoundariesAndTrim) {
  const std::string s = "a\xC3\xA9z";
  EXPECT_TRUE(is_char_boundary(s, 1));
  EXPECT_FALSE(is_char_boundary(s, 2));
  EXPECT_TRUE(is_char_boundary(s, 3));
  EXPECT_EQ(trim("  x y \n"), "x y");
  EXPECT_EQ(split_whitespace(" a  b\tc\n").size(), 3u);
  EXPECT_EQ(to_lower_ascii("AbC\xC3\x89"), "abc\xC3\x89");
}

TEST(Io, AtomicWriteRoundTrip) {
  const auto dir = testsupport::fresh_dir("io");
  write_file_atomic(dir / "nested" / "f.txt", "hello");
  EXPECT_EQ(read_file(dir / "nested" / "f.txt"), "hello");
  EXPECT_FALSE(read_file_if_exists(dir / "missing").has_value());
}
