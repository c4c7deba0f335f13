#pragma once

// Training objectives over a batch similarity matrix and the in-batch
// precision@1 tuning metric.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/encoder.hpp"

namespace dualenc {

enum class LossKind { kSoftmax, kInBatchCrossEntropy, kTriplet, kPairwiseCrossEntropy };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::kSoftmax: return "softmax";
    case LossKind::kInBatchCrossEntropy: return "in-batch-ce";
    case LossKind::kTriplet: return "triplet";
    case LossKind::kPairwiseCrossEntropy: return "pairwise-ce";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  for (auto k : {LossKind::kSoftmax, LossKind::kInBatchCrossEntropy, LossKind::kTriplet,
                 LossKind::kPairwiseCrossEntropy})
    if (to_string(k) == s) return k;
  throw Error("unknown loss '" + std::string(s) +
              "' (expected softmax, in-batch-ce, triplet or pairwise-ce)");
}

/// Scalar loss plus its gradient with respect to the matrix named by `target`.
struct LossOutput {
  double value = 0.0;
  Matrix dl_dm;
  GradientTarget target = GradientTarget::kScores;
};

struct TripletConfig {
  double delta = 0.5;
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// -log sigmoid(s) for label 1, -log(1 - sigmoid(s)) for label 0.
inline double logistic_loss(double s, double label) {
  return label * softplus(-s) + (1.0 - label) * softplus(s);
}

}  // namespace detail

/// Row-wise softmax with the diagonal as target class, averaged over rows.
inline LossOutput in_batch_sampled_softmax(const SimilarityMatrix& m) {
  const std::size_t b = m.batch_size();
  LossOutput out{0.0, Matrix(b, b), GradientTarget::kScores};
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto row = m.scores.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double s : row) z += std::exp(s - mx);
    const double log_z = mx + std::log(z);
    out.value += (log_z - row[i]) * inv_b;
    for (std::size_t j = 0; j < b; ++j)
      out.dl_dm(i, j) = (std::exp(row[j] - log_z) - (i == j ? 1.0 : 0.0)) * inv_b;
  }
  return out;
}

/// Binary cross-entropy on every entry (diagonal positive), mean over B^2.
inline LossOutput in_batch_cross_entropy(const SimilarityMatrix& m) {
  const std::size_t b = m.batch_size();
  LossOutput out{0.0, Matrix(b, b), GradientTarget::kScores};
  const double inv = 1.0 / static_cast<double>(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double y = i == j ? 1.0 : 0.0;
      const double s = m.scores(i, j);
      out.value += detail::logistic_loss(s, y) * inv;
      out.dl_dm(i, j) = (detail::sigmoid(s) - y) * inv;
    }
  return out;
}

/// Hinge max(0, delta - s+ + s-) against the hardest in-row negative, on raw
/// cosines. Ties for the hardest negative go to the lowest column.
inline LossOutput in_batch_triplet(const SimilarityMatrix& m, const TripletConfig& cfg = {}) {
  const std::size_t b = m.batch_size();
  if (b < 2) throw Error("in_batch_triplet: batch of " + std::to_string(b) +
                         " has no negatives (need at least 2)");
  if (cfg.delta < 0.0) throw Error("in_batch_triplet: negative margin");
  LossOutput out{0.0, Matrix(b, b), GradientTarget::kRawCosines};
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t hardest = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && m.raw_cosines(i, j) > m.raw_cosines(i, hardest)) hardest = j;
    const double hinge = cfg.delta - m.raw_cosines(i, i) + m.raw_cosines(i, hardest);
    if (hinge > 0.0) {
      out.value += hinge * inv_b;
      out.dl_dm(i, i) -= inv_b;
      out.dl_dm(i, hardest) += inv_b;
    }
  }
  return out;
}

struct PairwiseLossOutput {
  double value = 0.0;
  std::vector<double> gradient;
};

/// Mean logistic loss of independent pair logits against 0/1 labels.
inline PairwiseLossOutput pairwise_cross_entropy(std::span<const double> scores,
                                                 std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw Error("pairwise_cross_entropy: " + std::to_string(scores.size()) + " scores vs " +
                std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw Error("pairwise_cross_entropy: no pairs");
  PairwiseLossOutput out{0.0, std::vector<double>(scores.size())};
  const double inv = 1.0 / static_cast<double>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double y = labels[i] != 0 ? 1.0 : 0.0;
    out.value += detail::logistic_loss(scores[i], y) * inv;
    out.gradient[i] = (detail::sigmoid(scores[i]) - y) * inv;
  }
  return out;
}

/// Pairwise cross-entropy over the diagonal of a batch matrix, where pair i is
/// (query i, candidate i) with label labels[i]. Off-diagonal entries get zero
/// gradient.
inline LossOutput pairwise_cross_entropy(const SimilarityMatrix& m,
                                         std::span<const int> labels) {
  const std::size_t b = m.batch_size();
  std::vector<double> diag(b);
  for (std::size_t i = 0; i < b; ++i) diag[i] = m.scores(i, i);
  auto p = pairwise_cross_entropy(diag, labels);
  LossOutput out{p.value, Matrix(b, b), GradientTarget::kScores};
  for (std::size_t i = 0; i < b; ++i) out.dl_dm(i, i) = p.gradient[i];
  return out;
}

/// Fraction of rows whose diagonal strictly beats every off-diagonal entry.
inline double in_batch_precision_at_1(const SimilarityMatrix& m) {
  const std::size_t b = m.batch_size();
  if (b == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < b && ok; ++j)
      if (j != i && !(m.scores(i, i) > m.scores(i, j))) ok = false;
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

/// Dispatches an in-batch loss. `labels` is consulted only by pairwise-ce;
/// an empty span there means every pair is positive.
inline LossOutput compute_loss(LossKind kind, const SimilarityMatrix& m,
                               const TripletConfig& triplet = {},
                               std::span<const int> labels = {}) {
  switch (kind) {
    case LossKind::kSoftmax: return in_batch_sampled_softmax(m);
    case LossKind::kInBatchCrossEntropy: return in_batch_cross_entropy(m);
    case LossKind::kTriplet: return in_batch_triplet(m, triplet);
    case LossKind::kPairwiseCrossEntropy: {
      if (labels.empty()) {
        const std::vector<int> ones(m.batch_size(), 1);
        return pairwise_cross_entropy(m, ones);
      }
      return pairwise_cross_entropy(m, labels);
    }
  }
  throw Error("unhandled loss kind");
}

}  // namespace dualenc
