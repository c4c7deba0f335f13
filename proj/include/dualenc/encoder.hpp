#pragma once

// Averaged-word-embedding encoder, cosine similarity with an affine logit
// scale, batch similarity matrices and the matching backward pass.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/text.hpp"

namespace dualenc {

/// V x d table of word embeddings; the complete parameter set of the encoder.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab_size, std::size_t dimension)
      : weights_(vocab_size, dimension) {}
  explicit EmbeddingTable(Matrix weights) : weights_(std::move(weights)) {}

  /// Entries drawn from uniform(-0.5/d, 0.5/d) with a seeded generator.
  static EmbeddingTable random(std::size_t vocab_size, std::size_t dimension,
                               std::uint64_t seed) {
    EmbeddingTable t(vocab_size, dimension);
    std::mt19937_64 rng(seed);
    const double half = 0.5 / static_cast<double>(dimension);
    std::uniform_real_distribution<double> dist(-half, half);
    for (double& w : t.weights_.data()) w = dist(rng);
    return t;
  }

  std::size_t vocab_size() const noexcept { return weights_.rows(); }
  std::size_t dimension() const noexcept { return weights_.cols(); }

  std::span<double> row(TokenId id) { return weights_.row(id); }
  std::span<const double> row(TokenId id) const { return weights_.row(id); }

  Matrix& weights() noexcept { return weights_; }
  const Matrix& weights() const noexcept { return weights_; }

  bool operator==(const EmbeddingTable&) const = default;

 private:
  Matrix weights_;
};

/// Affine transform alpha * cosine + beta turning a similarity into a logit.
struct AffineScale {
  double alpha = 5.0;
  double beta = 0.0;

  bool operator==(const AffineScale&) const = default;
};

namespace detail {
inline void check_ids(const EmbeddingTable& table, std::span<const TokenId> ids) {
  for (TokenId id : ids)
    if (id >= table.vocab_size())
      throw Error("token id " + std::to_string(id) + " outside embedding table of " +
                  std::to_string(table.vocab_size()) + " rows");
}
}  // namespace detail

/// Mean of the selected rows; the empty list encodes to the zero vector.
inline Vector encode_average(const EmbeddingTable& table, std::span<const TokenId> ids) {
  detail::check_ids(table, ids);
  Vector out(table.dimension(), 0.0);
  if (ids.empty()) return out;
  for (TokenId id : ids) {
    auto r = table.row(id);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += r[k];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& x : out) x *= inv;
  return out;
}

/// sum(w_i * row_i) / sum(w_i); zero vector when the weights sum to zero.
inline Vector encode_idf_weighted(const EmbeddingTable& table, std::span<const TokenId> ids,
                                  std::span<const double> weights) {
  if (ids.size() != weights.size())
    throw Error("encode_idf_weighted: " + std::to_string(ids.size()) + " ids but " +
                std::to_string(weights.size()) + " weights");
  detail::check_ids(table, ids);
  Vector out(table.dimension(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (weights[i] < 0.0) throw Error("encode_idf_weighted: negative weight");
    auto r = table.row(ids[i]);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weights[i] * r[k];
    total += weights[i];
  }
  if (total == 0.0) return Vector(table.dimension(), 0.0);
  for (double& x : out) x /= total;
  return out;
}

/// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline double scaled_score(double c, const AffineScale& scale) {
  return scale.alpha * c + scale.beta;
}

/// B x B batch matrix; row i is query i, column j is candidate j and the
/// diagonal holds the positive pairs.
struct SimilarityMatrix {
  Matrix scores;
  Matrix raw_cosines;

  std::size_t batch_size() const noexcept { return scores.rows(); }
};

inline SimilarityMatrix similarity_matrix(const std::vector<Vector>& queries,
                                          const std::vector<Vector>& candidates,
                                          const AffineScale& scale) {
  if (queries.size() != candidates.size())
    throw Error("similarity_matrix: " + std::to_string(queries.size()) + " queries vs " +
                std::to_string(candidates.size()) + " candidates");
  if (queries.empty()) throw Error("similarity_matrix: empty batch");
  const std::size_t b = queries.size();
  SimilarityMatrix m{Matrix(b, b), Matrix(b, b)};
  std::vector<double> qn(b), cn(b);
  for (std::size_t i = 0; i < b; ++i) {
    qn[i] = norm(queries[i]);
    cn[i] = norm(candidates[i]);
  }
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double c = 0.0;
      if (qn[i] != 0.0 && cn[j] != 0.0) c = dot(queries[i], candidates[j]) / (qn[i] * cn[j]);
      m.raw_cosines(i, j) = c;
      m.scores(i, j) = scaled_score(c, scale);
    }
  return m;
}

/// Which entries an upstream gradient refers to: the scaled logits or the
/// raw cosines (the triplet loss works directly on cosines).
enum class GradientTarget { kScores, kRawCosines };

/// Gradients of a scalar loss. Embedding gradients are kept only for the
/// rows a batch touched.
struct ParameterGradients {
  std::map<TokenId, Vector> d_weights;
  double d_alpha = 0.0;
  double d_beta = 0.0;

  void scale_by(double f) {
    for (auto& [id, g] : d_weights)
      for (double& x : g) x *= f;
    d_alpha *= f;
    d_beta *= f;
  }

  // Adds f * other into this.
  void accumulate(const ParameterGradients& other, double f = 1.0) {
    for (const auto& [id, g] : other.d_weights) {
      auto [it, inserted] = d_weights.try_emplace(id, g.size(), 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += f * g[k];
    }
    d_alpha += f * other.d_alpha;
    d_beta += f * other.d_beta;
  }
};

using TokenSequence = std::vector<TokenId>;

/// Backpropagates dL/dM through affine scale, cosine and averaging into the
/// embedding rows and the scale parameters. The cosine gradient at a
/// zero-norm encoding is taken to be zero.
inline ParameterGradients encoder_backward(const std::vector<TokenSequence>& queries,
                                           const std::vector<TokenSequence>& candidates,
                                           const EmbeddingTable& table,
                                           const AffineScale& scale, const Matrix& dl_dm,
                                           GradientTarget target = GradientTarget::kScores) {
  const std::size_t b = queries.size();
  if (candidates.size() != b || dl_dm.rows() != b || dl_dm.cols() != b)
    throw Error("encoder_backward: upstream gradient is " + std::to_string(dl_dm.rows()) +
                "x" + std::to_string(dl_dm.cols()) + " for a batch of " +
                std::to_string(b) + "/" + std::to_string(candidates.size()));
  const std::size_t d = table.dimension();

  std::vector<Vector> u(b), v(b);
  std::vector<double> un(b), vn(b);
  for (std::size_t i = 0; i < b; ++i) {
    u[i] = encode_average(table, queries[i]);
    v[i] = encode_average(table, candidates[i]);
    un[i] = norm(u[i]);
    vn[i] = norm(v[i]);
    // Unit vectors; zero-norm encodings stay zero.
    if (un[i] > 0.0)
      for (double& x : u[i]) x /= un[i];
    if (vn[i] > 0.0)
      for (double& x : v[i]) x /= vn[i];
  }

  ParameterGradients grads;
  const double chain = target == GradientTarget::kScores ? scale.alpha : 1.0;
  Matrix g(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double c = (un[i] > 0.0 && vn[j] > 0.0) ? dot(u[i], v[j]) : 0.0;
      g(i, j) = chain * dl_dm(i, j);
      if (target == GradientTarget::kScores) {
        grads.d_alpha += dl_dm(i, j) * c;
        grads.d_beta += dl_dm(i, j);
      }
    }

  // d cos(u, v) / du = (v_hat - cos * u_hat) / |u|
  std::vector<Vector> du(b, Vector(d, 0.0)), dv(b, Vector(d, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    if (un[i] == 0.0) continue;
    double radial = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (vn[j] == 0.0 || g(i, j) == 0.0) continue;
      const double c = dot(u[i], v[j]);
      radial += g(i, j) * c;
      for (std::size_t k = 0; k < d; ++k) du[i][k] += g(i, j) * v[j][k];
    }
    for (std::size_t k = 0; k < d; ++k) du[i][k] = (du[i][k] - radial * u[i][k]) / un[i];
  }
  for (std::size_t j = 0; j < b; ++j) {
    if (vn[j] == 0.0) continue;
    double radial = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      if (un[i] == 0.0 || g(i, j) == 0.0) continue;
      const double c = dot(u[i], v[j]);
      radial += g(i, j) * c;
      for (std::size_t k = 0; k < d; ++k) dv[j][k] += g(i, j) * u[i][k];
    }
    for (std::size_t k = 0; k < d; ++k) dv[j][k] = (dv[j][k] - radial * v[j][k]) / vn[j];
  }

  auto scatter = [&](const TokenSequence& ids, const Vector& grad, double norm_value) {
    if (ids.empty() || norm_value == 0.0) return;
    const double share = 1.0 / static_cast<double>(ids.size());
    for (TokenId id : ids) {
      auto [it, inserted] = grads.d_weights.try_emplace(id, d, 0.0);
      for (std::size_t k = 0; k < d; ++k) it->second[k] += share * grad[k];
    }
  };
  for (std::size_t i = 0; i < b; ++i) {
    scatter(queries[i], du[i], un[i]);
    scatter(candidates[i], dv[i], vn[i]);
  }
  return grads;
}

// Whitespace-delimited text embeddings: optional "<V> <d>" header line, then
// "token v1 ... vd" per line. Tokens are kept in file order.
struct TokenEmbeddings {
  std::vector<Token> tokens;
  EmbeddingTable table;
};

inline void write_embeddings(std::ostream& os, const std::vector<Token>& tokens,
                             const EmbeddingTable& table) {
  if (tokens.size() != table.vocab_size())
    throw Error("write_embeddings: " + std::to_string(tokens.size()) + " tokens for " +
                std::to_string(table.vocab_size()) + " rows");
  os << table.vocab_size() << ' ' << table.dimension() << '\n';
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    os << tokens[i];
    for (double x : table.row(static_cast<TokenId>(i))) os << ' ' << format_double(x);
    os << '\n';
  }
}

inline TokenEmbeddings read_embeddings(std::istream& is) {
  std::vector<Token> tokens;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t declared_rows = 0;
  bool declared = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(std::move(f));
    if (parts.empty()) continue;
    if (lineno == 1 && parts.size() == 2 && tokens.empty()) {
      // "<V> <d>" header, distinguished from a 1-dimensional row by both fields
      // being unsigned integers.
      try {
        std::size_t pos0 = 0, pos1 = 0;
        const auto v = std::stoull(parts[0], &pos0);
        const auto dd = std::stoull(parts[1], &pos1);
        if (pos0 == parts[0].size() && pos1 == parts[1].size() && dd > 0) {
          declared_rows = v;
          dim = dd;
          declared = true;
          continue;
        }
      } catch (const std::exception&) {
      }
    }
    if (dim == 0) dim = parts.size() - 1;
    if (dim == 0) throw ParseError("embedding row without values", lineno);
    if (parts.size() - 1 != dim)
      throw ParseError("expected " + std::to_string(dim) + " values, found " +
                           std::to_string(parts.size() - 1),
                       lineno);
    tokens.push_back(parts[0]);
    for (std::size_t k = 1; k < parts.size(); ++k) {
      const double x = parse_double(parts[k], lineno);
      if (!std::isfinite(x)) throw ParseError("non-finite embedding value", lineno);
      values.push_back(x);
    }
  }
  if (declared && declared_rows != tokens.size())
    throw ParseError("header declares " + std::to_string(declared_rows) + " rows, found " +
                         std::to_string(tokens.size()),
                     0);
  Matrix m(tokens.size(), dim);
  m.data() = std::move(values);
  return {std::move(tokens), EmbeddingTable(std::move(m))};
}

inline void save_embeddings(const std::string& path, const std::vector<Token>& tokens,
                            const EmbeddingTable& table) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_embeddings(os, tokens, table);
}

inline TokenEmbeddings load_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_embeddings(is);
}

inline std::vector<Token> vocabulary_tokens(const Vocabulary& vocab) {
  std::vector<Token> out;
  out.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) out.push_back(vocab.token(static_cast<TokenId>(i)));
  return out;
}

}  // namespace dualenc
