#include "dualenc/search.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

namespace dualenc {
namespace {

using Encodings = std::vector<std::pair<ItemId, Vector>>;

Encodings random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g;
  Encodings out;
  for (std::size_t i = 0; i < n; ++i) {
    Vector v(d);
    for (double& x : v) x = g(rng);
    out.emplace_back("c" + std::to_string(i), v);
  }
  return out;
}

// Full score-and-sort with cosines computed from the raw vectors.
std::vector<ScoredItem> naive_top_k(const Encodings& corpus, const Vector& q, std::size_t k) {
  std::vector<ScoredItem> all;
  const double nq = norm(q);
  for (const auto& [id, v] : corpus) {
    const double nv = norm(v);
    all.push_back({id, (nv == 0.0 || nq == 0.0) ? 0.0 : dot(q, v) / (nq * nv)});
  }
  std::sort(all.begin(), all.end(), [](const ScoredItem& a, const ScoredItem& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

TEST(BuildIndex, NormalizesRows) {
  const auto idx = build_index({{"a", {3.0, 4.0}}, {"z", {0.0, 0.0}}});
  EXPECT_DOUBLE_EQ(idx.vectors()(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(idx.vectors()(0, 1), 0.8);
  EXPECT_FALSE(idx.is_zero(0));
  EXPECT_TRUE(idx.is_zero(1));
  EXPECT_EQ(idx.ids(), (std::vector<ItemId>{"a", "z"}));
  EXPECT_THROW(build_index({{"a", {1.0}}, {"a", {2.0}}}), Error);
  EXPECT_THROW(build_index({{"a", {1.0}}, {"b", {2.0, 1.0}}}), Error);
}

TEST(ExhaustiveTopK, HandCosines) {
  const auto idx = build_index({{"1", {1, 0}}, {"2", {0, 1}}, {"3", {-1, 0}}});
  const Vector q{1, 0};
  const auto r = exhaustive_top_k(idx, q, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].id, "1");
  EXPECT_DOUBLE_EQ(r[0].score, 1.0);
  EXPECT_EQ(r[1].id, "2");
  EXPECT_DOUBLE_EQ(r[1].score, 0.0);
  EXPECT_EQ(exhaustive_top_k(idx, q, 10).size(), 3u);
}

TEST(ExhaustiveTopK, ZeroCandidateScoresZeroAndTiesById) {
  const auto idx = build_index({{"b", {0, 0}}, {"a", {0, 1}}});
  const Vector q{1, 0};
  const auto r = exhaustive_top_k(idx, q, 5);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "b");
  EXPECT_EQ(r[1].score, 0.0);
}

TEST(ExhaustiveTopK, EdgeCases) {
  const CandidateIndex empty = build_index({});
  const Vector q{1.0};
  EXPECT_TRUE(exhaustive_top_k(empty, q, 3).empty());
  const auto idx = build_index({{"a", {1, 0}}});
  EXPECT_THROW(exhaustive_top_k(idx, q, 1), Error);
  const Vector q2{1, 0};
  EXPECT_THROW(exhaustive_top_k(idx, q2, 0), Error);
}

TEST(ExhaustiveTopK, MatchesNaiveOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 1 + rng() % 300;
    const std::size_t d = 1 + rng() % 16;
    auto corpus = random_corpus(rng, n, d);
    // Exact duplicates exercise the id tie-break.
    if (n > 2) corpus[1].second = corpus[0].second;
    const auto idx = build_index(corpus);
    const Vector q = random_corpus(rng, 1, d)[0].second;
    const std::size_t k = 1 + rng() % 20;
    const auto got = exhaustive_top_k(idx, q, k);
    const auto want = naive_top_k(corpus, q, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_EQ(got[i].id, want[i].id) << "trial " << t << " rank " << i;
      EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
    }
  }
}

TEST(ExhaustiveTopK, InvariantToQueryRescaling) {
  std::mt19937_64 rng(8);
  const auto corpus = random_corpus(rng, 200, 8);
  const auto idx = build_index(corpus);
  Vector q = random_corpus(rng, 1, 8)[0].second;
  const auto base = exhaustive_top_k(idx, q, 20);
  for (double& x : q) x *= 37.5;
  const auto scaled = exhaustive_top_k(idx, q, 20);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(base[i].id, scaled[i].id);
}

TEST(Quantize, ErrorWithinOneStep) {
  std::mt19937_64 rng(21);
  const auto idx = build_index(random_corpus(rng, 500, 16));
  const auto q = QuantizedIndex::quantize(idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t k = 0; k < idx.dimension(); ++k)
      EXPECT_LE(std::abs(q.decode(i, k) - idx.vectors()(i, k)), q.steps()[k] + 1e-15);
}

TEST(Quantize, ConstantCorpusIsExact) {
  Encodings corpus;
  for (int i = 0; i < 10; ++i) corpus.emplace_back("c" + std::to_string(i), Vector{1.0, 2.0, 2.0});
  const auto idx = build_index(corpus);
  const auto q = QuantizedIndex::quantize(idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(q.decode(i, k), idx.vectors()(i, k));
  const Vector query{0.3, -1.0, 2.0};
  const auto a = exhaustive_top_k(idx, query, 10);
  const auto b = quantized_top_k(q, query, 10);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].id, b[i].id);
}

TEST(QuantizedTopK, TopOneAgreementOnRandomCorpus) {
  std::mt19937_64 rng(1000);
  const auto corpus = random_corpus(rng, 1000, 32);
  const auto idx = build_index(corpus);
  const auto q = QuantizedIndex::quantize(idx);
  std::size_t agree = 0;
  const std::size_t trials = 200;
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::size_t t = 0; t < trials; ++t) {
    // Queries near a random candidate give a clear nearest neighbor.
    Vector query = corpus[rng() % corpus.size()].second;
    for (double& x : query) x += noise(rng);
    agree += exhaustive_top_k(idx, query, 1)[0].id == quantized_top_k(q, query, 1)[0].id;
  }
  EXPECT_GE(static_cast<double>(agree) / trials, 0.95);
}

TEST(QuantizedTopK, ZeroRowsScoreZero) {
  const auto idx = build_index({{"z", {0, 0}}, {"a", {1, 1}}, {"b", {-1, -1}}});
  const auto q = QuantizedIndex::quantize(idx);
  const Vector query{1, 1};
  const auto r = quantized_top_k(q, query, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "z");
  EXPECT_EQ(r[1].score, 0.0);
}

TEST(SearchAll, ParallelMatchesSerial) {
  std::mt19937_64 rng(4);
  const auto idx = build_index(random_corpus(rng, 300, 8));
  std::vector<Vector> queries;
  for (const auto& [id, v] : random_corpus(rng, 40, 8)) queries.push_back(v);
  auto fn = [&](const Vector& v) { return exhaustive_top_k(idx, v, 5); };
  const auto serial = search_all(queries, 1, fn);
  const auto parallel = search_all(queries, 4, fn);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) EXPECT_EQ(serial[i], parallel[i]);
}

TEST(IndexFiles, BinaryRoundTrip) {
  std::mt19937_64 rng(6);
  auto corpus = random_corpus(rng, 25, 5);
  corpus[3].second.assign(5, 0.0);
  const auto idx = build_index(corpus);
  std::stringstream ss;
  write_index(ss, idx);
  const auto back = read_candidate_index(ss);
  EXPECT_EQ(back.ids(), idx.ids());
  EXPECT_EQ(back.vectors(), idx.vectors());
  EXPECT_TRUE(back.is_zero(3));

  const auto q = QuantizedIndex::quantize(idx);
  std::stringstream qs;
  write_index(qs, q);
  const auto qback = read_quantized_index(qs);
  EXPECT_EQ(qback.ids(), q.ids());
  EXPECT_EQ(qback.mins(), q.mins());
  EXPECT_EQ(qback.steps(), q.steps());
  EXPECT_EQ(qback.raw_codes(), q.raw_codes());
  EXPECT_TRUE(qback.is_zero(3));
}

TEST(IndexFiles, WrongKindAndTruncationRejected) {
  const auto idx = build_index({{"a", {1, 2}}, {"b", {3, 4}}});
  std::stringstream ss;
  write_index(ss, idx);
  EXPECT_THROW(read_quantized_index(ss), Error);
  std::stringstream full;
  write_index(full, idx);
  std::string bytes = full.str();
  bytes.resize(bytes.size() - 4);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_candidate_index(cut), Error);
}

}  // namespace
}  // namespace dualenc
