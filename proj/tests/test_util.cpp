#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "empeval/error.hpp"
#include "empeval/util.hpp"

using namespace empeval;

TEST(Util, TrimSplitJoin) {
  EXPECT_EQ(trim("  a b \t\n"), "a b");
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(join({"x", "y", "z"}, "--"), "x--y--z");
  EXPECT_TRUE(starts_with_ci("English", "en"));
  EXPECT_FALSE(starts_with_ci("e", "en"));
}

TEST(Util, CsvQuotedFieldsAndNewlines) {
  const auto rows = parse_csv("a,b\n\"x, y\",\"he said \"\"hi\"\"\nok\"\n\n3,4\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].fields[0], "x, y");
  EXPECT_EQ(rows[1].fields[1], "he said \"hi\"\nok");
  EXPECT_EQ(rows[1].line, 2u);
  EXPECT_EQ(rows[2].line, 5u);
}

TEST(Util, CsvUnterminatedQuoteIsParseError) { EXPECT_THROW(parse_csv("a,\"b\n"), ParseError); }

TEST(Util, CsvRoundTrip) {
  const std::vector<std::string> fields = {"plain", "com,ma", "quo\"te", "new\nline", ""};
  const auto rows = parse_csv(csv_line(fields));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].fields, fields);
}

TEST(Util, Hashes) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Util, SeededShuffleIsAPermutationAndDeterministic) {
  std::vector<int> a(50), b;
  std::iota(a.begin(), a.end(), 0);
  b = a;
  seeded_shuffle(a, 7);
  seeded_shuffle(b, 7);
  EXPECT_EQ(a, b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  auto c = sorted;
  seeded_shuffle(c, 8);
  EXPECT_NE(a, c);
}
