#pragma once

// Discrete retrieval baselines over an inverted index: Okapi BM25, TFIDF
// cosine, and the identity baseline that returns only the query itself.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/ranking.hpp"
#include "dualenc/tasks.hpp"
#include "dualenc/text.hpp"

namespace dualenc {

struct BM25Params {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 >= 0.0)) throw Error("BM25 k1 must be nonnegative");
    if (!(b >= 0.0 && b <= 1.0)) throw Error("BM25 b must lie in [0, 1]");
  }
};

struct Posting {
  std::size_t doc;  // position in InvertedIndex::doc_ids()
  std::size_t tf;

  bool operator==(const Posting&) const = default;
};

/// Token -> postings, with documents numbered by insertion order.
class InvertedIndex {
 public:
  std::size_t num_docs() const noexcept { return doc_ids_.size(); }
  double avg_doc_length() const noexcept { return avg_doc_length_; }
  const std::vector<ItemId>& doc_ids() const noexcept { return doc_ids_; }
  std::size_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }

  const std::vector<Posting>* postings(std::string_view token) const {
    auto it = postings_.find(std::string(token));
    return it == postings_.end() ? nullptr : &it->second;
  }

  std::size_t doc_freq(std::string_view token) const {
    const auto* p = postings(token);
    return p ? p->size() : 0;
  }

  std::size_t doc_position(const ItemId& id) const {
    auto it = position_.find(id);
    if (it == position_.end()) throw Error("document '" + id + "' is not in the index");
    return it->second;
  }

  /// Term frequency of `token` in document position `doc`.
  std::size_t tf(std::string_view token, std::size_t doc) const {
    const auto* p = postings(token);
    if (!p) return 0;
    auto it = std::lower_bound(p->begin(), p->end(), doc,
                               [](const Posting& x, std::size_t d) { return x.doc < d; });
    return (it != p->end() && it->doc == doc) ? it->tf : 0;
  }

  // L2 norm of the document's tf*idf vector, cached at build time.
  double tfidf_norm(std::size_t doc) const { return tfidf_norms_.at(doc); }

  friend InvertedIndex build_inverted_index(
      const std::vector<std::pair<ItemId, std::vector<Token>>>& docs);

 private:
  std::unordered_map<Token, std::vector<Posting>> postings_;
  std::vector<ItemId> doc_ids_;
  std::vector<std::size_t> doc_lengths_;
  std::unordered_map<ItemId, std::size_t> position_;
  std::vector<double> tfidf_norms_;
  double avg_doc_length_ = 0.0;
};

inline InvertedIndex build_inverted_index(
    const std::vector<std::pair<ItemId, std::vector<Token>>>& docs) {
  InvertedIndex idx;
  std::size_t total = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& [id, tokens] = docs[d];
    if (!idx.position_.emplace(id, d).second)
      throw Error("build_inverted_index: duplicate id '" + id + "'");
    idx.doc_ids_.push_back(id);
    idx.doc_lengths_.push_back(tokens.size());
    total += tokens.size();
    std::map<std::string_view, std::size_t> counts;
    for (const auto& t : tokens) ++counts[t];
    for (const auto& [t, c] : counts) idx.postings_[Token(t)].push_back({d, c});
  }
  if (!docs.empty()) idx.avg_doc_length_ = static_cast<double>(total) / static_cast<double>(docs.size());

  idx.tfidf_norms_.assign(docs.size(), 0.0);
  for (const auto& [t, plist] : idx.postings_) {
    const double w = smoothed_idf(docs.size(), plist.size());
    for (const auto& p : plist) idx.tfidf_norms_[p.doc] += std::pow(static_cast<double>(p.tf) * w, 2);
  }
  for (double& n : idx.tfidf_norms_) n = std::sqrt(n);
  return idx;
}

/// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
inline double bm25_idf(std::size_t num_docs, std::size_t doc_freq) {
  const double n = static_cast<double>(num_docs);
  const double df = static_cast<double>(doc_freq);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

namespace detail {
inline double bm25_at(const InvertedIndex& index, const std::vector<Token>& query,
                      std::size_t doc, const BM25Params& params) {
  const double avgdl = index.avg_doc_length();
  const double norm_len =
      avgdl > 0.0 ? 1.0 - params.b + params.b * static_cast<double>(index.doc_length(doc)) / avgdl
                  : 1.0;
  double score = 0.0;
  for (const auto& t : query) {
    const std::size_t tf = index.tf(t, doc);
    if (tf == 0) continue;
    const double f = static_cast<double>(tf);
    score += bm25_idf(index.num_docs(), index.doc_freq(t)) * f * (params.k1 + 1.0) /
             (f + params.k1 * norm_len);
  }
  return score;
}

inline double tfidf_at(const InvertedIndex& index, const std::vector<Token>& query,
                       std::size_t doc) {
  std::map<std::string_view, std::size_t> qtf;
  for (const auto& t : query) ++qtf[t];
  double dotp = 0.0;
  double qnorm = 0.0;
  for (const auto& [t, c] : qtf) {
    const double w = smoothed_idf(index.num_docs(), index.doc_freq(t));
    const double qw = static_cast<double>(c) * w;
    qnorm += qw * qw;
    dotp += qw * static_cast<double>(index.tf(t, doc)) * w;
  }
  const double dn = index.tfidf_norm(doc);
  if (qnorm == 0.0 || dn == 0.0) return 0.0;
  return dotp / (std::sqrt(qnorm) * dn);
}
}  // namespace detail

/// Okapi BM25 of `doc_id` for the query tokens (repeated tokens count again).
inline double bm25_score(const InvertedIndex& index, const std::vector<Token>& query,
                         const ItemId& doc_id, const BM25Params& params = {}) {
  params.validate();
  return detail::bm25_at(index, query, index.doc_position(doc_id), params);
}

/// Cosine between raw-tf x smoothed-idf vectors of query and document. Query
/// tokens unseen in the index still count toward the query norm.
inline double tfidf_score(const InvertedIndex& index, const std::vector<Token>& query,
                          const ItemId& doc_id) {
  return detail::tfidf_at(index, query, index.doc_position(doc_id));
}

enum class DiscreteScorer { kBM25, kTfidf };

/// Scores the documents sharing at least one token with the query and keeps
/// the best K (descending score, ties by ascending id). Scores accumulate term
/// at a time in the same order as bm25_score / tfidf_score, so they match
/// those functions exactly.
inline RankedList discrete_top_k(const InvertedIndex& index, const std::vector<Token>& query,
                                 std::size_t k, DiscreteScorer scorer,
                                 const BM25Params& params = {}) {
  if (k < 1) throw Error("discrete_top_k: K must be at least 1");
  params.validate();
  std::vector<double> acc(index.num_docs(), 0.0);
  std::vector<std::uint8_t> touched(index.num_docs(), 0);
  std::vector<std::size_t> docs;
  auto touch = [&](std::size_t doc) {
    if (!touched[doc]) {
      touched[doc] = 1;
      docs.push_back(doc);
    }
  };

  if (scorer == DiscreteScorer::kBM25) {
    const double avgdl = index.avg_doc_length();
    for (const auto& t : query) {
      const auto* plist = index.postings(t);
      if (!plist) continue;
      const double w = bm25_idf(index.num_docs(), plist->size());
      for (const auto& p : *plist) {
        const double norm_len =
            avgdl > 0.0
                ? 1.0 - params.b + params.b * static_cast<double>(index.doc_length(p.doc)) / avgdl
                : 1.0;
        const double f = static_cast<double>(p.tf);
        acc[p.doc] += w * f * (params.k1 + 1.0) / (f + params.k1 * norm_len);
        touch(p.doc);
      }
    }
  } else {
    std::map<std::string_view, std::size_t> qtf;
    for (const auto& t : query) ++qtf[t];
    double qnorm = 0.0;
    for (const auto& [t, c] : qtf) {
      const double w = smoothed_idf(index.num_docs(), index.doc_freq(t));
      const double qw = static_cast<double>(c) * w;
      qnorm += qw * qw;
      if (const auto* plist = index.postings(t))
        for (const auto& p : *plist) {
          acc[p.doc] += qw * static_cast<double>(p.tf) * w;
          touch(p.doc);
        }
    }
    for (std::size_t doc : docs) {
      const double dn = index.tfidf_norm(doc);
      acc[doc] = (qnorm == 0.0 || dn == 0.0) ? 0.0 : acc[doc] / (std::sqrt(qnorm) * dn);
    }
  }

  const auto& ids = index.doc_ids();
  return select_top_k(
      docs.size(), k, [&](std::size_t i) { return acc[docs[i]]; },
      [&](std::size_t i) -> const ItemId& { return ids[docs[i]]; });
}

/// The candidate whose text equals the query's text. Items are deduplicated
/// by exact text, so this is the query itself.
inline RankedList identity_retrieval(const RetrievalTask& task, const ItemId& query) {
  if (!task.has_candidate(query)) throw Error("identity_retrieval: query '" + query + "' is not a candidate");
  return RankedList{{{query, 1.0}}};
}

}  // namespace dualenc
