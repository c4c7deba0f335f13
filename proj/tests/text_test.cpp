#include "dualenc/text.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

namespace dualenc {
namespace {

using Tokens = std::vector<Token>;

TEST(Tokenize, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize("How do I boot Ubuntu?"), (Tokens{"how", "do", "i", "boot", "ubuntu"}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, CollapsesWhitespaceAndFoldsCase) {
  EXPECT_EQ(tokenize("  A  a\tA "), (Tokens{"a", "a", "a"}));
}

TEST(Tokenize, KeepsInnerPunctuationAndDropsPurePunctuation) {
  EXPECT_EQ(tokenize("what's (x)-y ?? ..."), (Tokens{"what's", "x)-y"}));
}

TEST(Tokenize, SplitsOnUnicodeWhitespace) {
  // U+00A0 no-break space and U+3000 ideographic space.
  EXPECT_EQ(tokenize("a\xC2\xA0" "b\xE3\x80\x80" "c"), (Tokens{"a", "b", "c"}));
}

TEST(Tokenize, IdempotentUnderRejoin) {
  std::mt19937 rng(7);
  const std::string alphabet = "aBc!?. \t\n'-Z";
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    const int len = static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    const auto once = tokenize(s);
    std::string joined;
    for (std::size_t i = 0; i < once.size(); ++i) joined += (i ? " " : "") + once[i];
    EXPECT_EQ(tokenize(joined), once) << "input: " << s;
    for (const auto& t : once) {
      EXPECT_EQ(t.find_first_of(" \t\n"), std::string::npos);
      for (char c : t) EXPECT_FALSE(c >= 'A' && c <= 'Z');
    }
  }
}

TEST(BuildVocabulary, CountsDocumentFrequency) {
  const auto v = build_vocabulary({{"a", "b"}, {"a"}}, 1);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.num_docs(), 2u);
  EXPECT_EQ(v.doc_freq("a"), 2u);
  EXPECT_EQ(v.doc_freq("b"), 1u);
  EXPECT_EQ(*v.find("a"), 0u);  // most frequent first
}

TEST(BuildVocabulary, MinCountFilters) {
  const auto v = build_vocabulary({{"a", "b"}, {"a"}}, 2);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v.find("a").has_value());
  EXPECT_FALSE(v.find("b").has_value());
}

TEST(BuildVocabulary, EmptyCorpus) {
  const auto v = build_vocabulary({}, 1);
  EXPECT_EQ(v.size(), 0u);
  EXPECT_EQ(v.num_docs(), 0u);
}

TEST(BuildVocabulary, TiesBrokenLexicographically) {
  const auto v = build_vocabulary({{"zeta", "alpha", "mid"}, {"mid"}}, 1);
  EXPECT_EQ(v.token(0), "mid");
  EXPECT_EQ(v.token(1), "alpha");
  EXPECT_EQ(v.token(2), "zeta");
}

TEST(BuildVocabulary, RepeatedTokenCountsOnceForDocFreq) {
  const auto v = build_vocabulary({{"a", "a", "a"}, {"b"}}, 1);
  EXPECT_EQ(v.doc_freq("a"), 1u);
}

TEST(BuildVocabulary, RejectsZeroMinCount) { EXPECT_THROW(build_vocabulary({}, 0), Error); }

TEST(BuildVocabulary, InvariantsOnRandomCorpora) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Token>> corpus(rng() % 20);
    for (auto& doc : corpus)
      for (int i = 0, n = static_cast<int>(rng() % 8); i < n; ++i)
        doc.push_back(std::string(1, static_cast<char>('a' + rng() % 6)));
    const std::size_t min_count = 1 + rng() % 3;
    const auto v = build_vocabulary(corpus, min_count);
    EXPECT_EQ(v, build_vocabulary(corpus, min_count));
    for (TokenId id = 0; id < v.size(); ++id) {
      EXPECT_EQ(*v.find(v.token(id)), id);
      EXPECT_LE(v.doc_freq(id), v.num_docs());
    }
  }
}

TEST(Idf, TokenInEveryDocumentIsOne) {
  const auto v = build_vocabulary({{"a"}, {"a", "b"}, {"a"}}, 1);
  EXPECT_DOUBLE_EQ(idf(v, "a"), 1.0);
}

TEST(Idf, SmoothedFormula) {
  EXPECT_NEAR(smoothed_idf(9, 4), 1.6931471805599454, 1e-15);
  EXPECT_NEAR(smoothed_idf(9, 0), 3.302585092994046, 1e-15);
}

TEST(Idf, OutOfVocabularyToken) {
  std::vector<std::vector<Token>> corpus(9, Tokens{"x"});
  const auto v = build_vocabulary(corpus, 1);
  EXPECT_NEAR(idf(v, "never-seen"), 3.302585092994046, 1e-15);
}

TEST(Idf, UnbuiltStatisticsIsAnError) {
  EXPECT_THROW(idf(Vocabulary{}, "a"), Error);
}

TEST(Idf, NonincreasingInDocFreq) {
  for (std::size_t n = 1; n < 30; ++n)
    for (std::size_t df = 0; df < n; ++df) EXPECT_GE(smoothed_idf(n, df), smoothed_idf(n, df + 1));
}

TEST(VocabularyFile, RoundTrip) {
  const auto v = build_vocabulary({{"a", "b", "c"}, {"a", "c"}, {"c"}}, 1);
  std::stringstream ss;
  write_vocabulary(ss, v);
  EXPECT_EQ(ss.str().substr(0, 12), "#num_docs=3\n");
  EXPECT_EQ(read_vocabulary(ss), v);
}

TEST(VocabularyFile, RejectsMalformedLine) {
  std::stringstream ss("#num_docs=1\nfoo\t0\n");
  try {
    read_vocabulary(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

}  // namespace
}  // namespace dualenc
