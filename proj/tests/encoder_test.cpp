#include "dualenc/encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dualenc/loss.hpp"
#include "gradient_oracle.hpp"

namespace dualenc {
namespace {

EmbeddingTable table_of(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t d = rows.begin()->size();
  EmbeddingTable t(rows.size(), d);
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::size_t k = 0;
    for (double x : r) t.row(static_cast<TokenId>(i))[k++] = x;
    ++i;
  }
  return t;
}

TEST(EncodeAverage, SingleRowIsThatRow) {
  const auto t = EmbeddingTable::random(4, 3, 1);
  const std::vector<TokenId> ids{2};
  const auto e = encode_average(t, ids);
  EXPECT_EQ(e, Vector(t.row(2).begin(), t.row(2).end()));
  const std::vector<TokenId> twice{2, 2};
  EXPECT_EQ(encode_average(t, twice), e);
}

TEST(EncodeAverage, MeanOfRows) {
  const auto t = table_of({{1, 0}, {0, 1}});
  const std::vector<TokenId> ids{0, 1};
  EXPECT_EQ(encode_average(t, ids), (Vector{0.5, 0.5}));
}

TEST(EncodeAverage, EmptyIsZero) {
  const auto t = table_of({{1, 2}});
  EXPECT_EQ(encode_average(t, {}), (Vector{0.0, 0.0}));
}

TEST(EncodeAverage, OutOfRangeIdThrows) {
  const auto t = table_of({{1, 2}});
  const std::vector<TokenId> ids{1};
  EXPECT_THROW(encode_average(t, ids), Error);
}

TEST(EncodeIdfWeighted, WeightedMean) {
  const auto t = table_of({{2, 0}, {0, 2}});
  const std::vector<TokenId> ids{0, 1};
  const std::vector<double> w{3, 1};
  EXPECT_EQ(encode_idf_weighted(t, ids, w), (Vector{1.5, 0.5}));
}

TEST(EncodeIdfWeighted, UniformWeightsMatchAverage) {
  const auto t = EmbeddingTable::random(6, 5, 9);
  const std::vector<TokenId> ids{0, 3, 5, 3};
  const std::vector<double> w(ids.size(), 2.5);
  const auto a = encode_average(t, ids);
  const auto b = encode_idf_weighted(t, ids, w);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
}

TEST(EncodeIdfWeighted, EmptyAndZeroWeightsGiveZero) {
  const auto t = table_of({{2, 0}});
  EXPECT_EQ(encode_idf_weighted(t, {}, {}), (Vector{0, 0}));
  const std::vector<TokenId> ids{0};
  const std::vector<double> w{0.0};
  EXPECT_EQ(encode_idf_weighted(t, ids, w), (Vector{0, 0}));
}

TEST(EncodeIdfWeighted, LengthMismatchThrows) {
  const auto t = table_of({{2, 0}});
  const std::vector<TokenId> ids{0};
  EXPECT_THROW(encode_idf_weighted(t, ids, {}), Error);
}

TEST(Cosine, BasicValues) {
  const Vector v{0.3, -2.0, 1.0};
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
  EXPECT_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine(Vector{1, 1}, Vector{1, 0}), 0.7071067811865475, 1e-15);
  EXPECT_EQ(cosine(Vector{0, 0}, Vector{1, 0}), 0.0);
}

TEST(Cosine, ScaleInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    Vector a(7), b(7);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const double t = std::exp(n(rng) * 3);
    Vector ta = a;
    for (auto& x : ta) x *= t;
    EXPECT_NEAR(cosine(ta, b), cosine(a, b), 1e-12);
  }
}

TEST(ScaledScore, Affine) {
  EXPECT_DOUBLE_EQ(scaled_score(0.3, {1, 0}), 0.3);
  EXPECT_DOUBLE_EQ(scaled_score(0.5, {5, -2}), 0.5);
  EXPECT_DOUBLE_EQ(scaled_score(-0.9, {0, 7}), 7.0);
}

TEST(SimilarityMatrix, SingleIdenticalPair) {
  const auto m = similarity_matrix({{1, 2}}, {{1, 2}}, {1, 0});
  ASSERT_EQ(m.batch_size(), 1u);
  EXPECT_NEAR(m.scores(0, 0), 1.0, 1e-15);
}

TEST(SimilarityMatrix, OrthogonalPairsAndAffine) {
  const std::vector<Vector> x{{1, 0}, {0, 1}};
  const auto id = similarity_matrix(x, x, {1, 0});
  EXPECT_EQ(id.scores(0, 0), 1.0);
  EXPECT_EQ(id.scores(0, 1), 0.0);
  EXPECT_EQ(id.scores(1, 0), 0.0);
  EXPECT_EQ(id.scores(1, 1), 1.0);
  const auto sc = similarity_matrix(x, x, {2, 1});
  EXPECT_EQ(sc.scores(0, 0), 3.0);
  EXPECT_EQ(sc.scores(0, 1), 1.0);
  EXPECT_EQ(sc.scores(1, 1), 3.0);
  EXPECT_EQ(sc.raw_cosines, id.raw_cosines);
}

TEST(SimilarityMatrix, LengthMismatchThrows) {
  EXPECT_THROW(similarity_matrix({{1}}, {{1}, {2}}, {}), Error);
}

TEST(SimilarityMatrix, SymmetricUnitDiagonalOnSelf) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  std::vector<Vector> x(6, Vector(4));
  for (auto& v : x)
    for (auto& e : v) e = n(rng);
  const auto m = similarity_matrix(x, x, {1, 0});
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(m.scores(i, i), 1.0, 1e-12);
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(m.scores(i, j), m.scores(j, i), 1e-15);
      EXPECT_LE(std::abs(m.raw_cosines(i, j)), 1.0 + 1e-6);
    }
  }
}

TEST(EncoderBackward, ZeroUpstreamGivesZeroGradients) {
  const auto t = EmbeddingTable::random(5, 4, 2);
  const std::vector<TokenSequence> q{{0, 1}, {2}}, c{{3}, {4, 0}};
  const auto g = encoder_backward(q, c, t, {3, 1}, Matrix(2, 2));
  EXPECT_EQ(g.d_alpha, 0.0);
  EXPECT_EQ(g.d_beta, 0.0);
  for (const auto& [id, row] : g.d_weights)
    for (double x : row) EXPECT_EQ(x, 0.0);
}

TEST(EncoderBackward, ScaleGradientsClosedForm) {
  std::mt19937_64 rng(4);
  auto inst = testing::random_instance(rng, 6, 3, 4);
  Matrix up(4, 4);
  std::normal_distribution<double> n;
  double sum = 0.0;
  for (double& x : up.data()) {
    x = n(rng);
    sum += x;
  }
  const auto m = testing::forward_matrix(inst);
  double expected_alpha = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) expected_alpha += up(i, j) * m.raw_cosines(i, j);
  const auto g = encoder_backward(inst.queries, inst.candidates, inst.table, inst.scale, up);
  EXPECT_NEAR(g.d_beta, sum, 1e-12);
  EXPECT_NEAR(g.d_alpha, expected_alpha, 1e-12);
}

TEST(EncoderBackward, UnusedRowsHaveNoGradient) {
  const auto t = EmbeddingTable::random(8, 3, 2);
  const std::vector<TokenSequence> q{{0}, {1}}, c{{2}, {3}};
  Matrix up(2, 2, 0.25);
  const auto g = encoder_backward(q, c, t, {}, up);
  for (TokenId id = 4; id < 8; ++id) EXPECT_EQ(g.d_weights.count(id), 0u);
}

TEST(EncoderBackward, ShapeMismatchThrows) {
  const auto t = EmbeddingTable::random(3, 2, 2);
  const std::vector<TokenSequence> q{{0}, {1}}, c{{2}, {1}};
  EXPECT_THROW(encoder_backward(q, c, t, {}, Matrix(3, 3)), Error);
}

TEST(EncoderBackward, ZeroNormEncodingGetsZeroGradient) {
  auto t = EmbeddingTable::random(3, 2, 2);
  t.row(0)[0] = 0.0;
  t.row(0)[1] = 0.0;
  const std::vector<TokenSequence> q{{0}, {1}}, c{{2}, {1}};
  const auto g = encoder_backward(q, c, t, {}, Matrix(2, 2, 1.0));
  if (g.d_weights.count(0)) {
    EXPECT_EQ(g.d_weights.at(0), (Vector{0.0, 0.0}));
  }
}

TEST(EncoderBackward, MatchesFiniteDifferencesOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = testing::random_instance(rng, 5, 4, 3);
    // Arbitrary smooth upstream: softmax over the scores.
    const auto res = testing::check_gradients(LossKind::kSoftmax, inst);
    EXPECT_LE(res.max_relative_error, 1e-4) << "trial " << trial;
  }
}

TEST(EmbeddingFile, RoundTripIsExact) {
  const auto t = EmbeddingTable::random(3, 4, 17);
  const std::vector<Token> tokens{"a", "b", "c"};
  std::stringstream ss;
  write_embeddings(ss, tokens, t);
  const auto back = read_embeddings(ss);
  EXPECT_EQ(back.tokens, tokens);
  EXPECT_EQ(back.table, t);
}

TEST(EmbeddingFile, HeaderIsOptional) {
  std::stringstream ss("the 0.5 1.5\ncat -1 2e-3\n");
  const auto e = read_embeddings(ss);
  ASSERT_EQ(e.tokens.size(), 2u);
  EXPECT_EQ(e.table.dimension(), 2u);
  EXPECT_EQ(e.table.row(1)[1], 2e-3);
}

TEST(EmbeddingFile, RaggedRowIsParseError) {
  std::stringstream ss("2 2\na 1 2\nb 1\n");
  try {
    read_embeddings(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(EmbeddingTable, RandomInitIsSeededAndBounded) {
  const auto a = EmbeddingTable::random(10, 300, 42);
  EXPECT_EQ(a, EmbeddingTable::random(10, 300, 42));
  EXPECT_NE(a, EmbeddingTable::random(10, 300, 43));
  for (double w : a.weights().data()) EXPECT_LE(std::abs(w), 0.5 / 300);
}

}  // namespace
}  // namespace dualenc
