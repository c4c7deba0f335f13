#pragma once

// Ranked result lists, bounded top-K selection and the TREC run format.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "dualenc/common.hpp"

namespace dualenc {

struct ScoredItem {
  ItemId id;
  double score = 0.0;

  bool operator==(const ScoredItem&) const = default;
};

/// Results for one query: descending score, ties by ascending id.
struct RankedList {
  std::vector<ScoredItem> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  auto begin() const { return entries.begin(); }
  auto end() const { return entries.end(); }
  const ScoredItem& operator[](std::size_t i) const { return entries[i]; }

  bool operator==(const RankedList&) const = default;
};

// Strict "ranks ahead of" order shared by every retriever.
inline bool ranks_before(double score_a, const ItemId& id_a, double score_b, const ItemId& id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

/// Keeps the K best of `n` items scored by `score_of(i)`, identified by
/// `id_of(i)`, using a size-K heap. Items rejected by `keep(i)` are skipped.
template <typename ScoreFn, typename IdFn, typename KeepFn>
RankedList select_top_k(std::size_t n, std::size_t k, ScoreFn&& score_of, IdFn&& id_of,
                        KeepFn&& keep) {
  RankedList out;
  if (k == 0 || n == 0) return out;
  struct Entry {
    double score;
    std::size_t index;
  };
  // Heap top is the weakest kept entry.
  auto weaker = [&](const Entry& a, const Entry& b) {
    return ranks_before(a.score, id_of(a.index), b.score, id_of(b.index));
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(weaker)> heap(weaker);
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep(i)) continue;
    Entry e{score_of(i), i};
    if (heap.size() < k) {
      heap.push(e);
    } else if (weaker(e, heap.top())) {
      heap.pop();
      heap.push(e);
    }
  }
  out.entries.resize(heap.size());
  for (std::size_t pos = heap.size(); pos-- > 0;) {
    out.entries[pos] = {id_of(heap.top().index), heap.top().score};
    heap.pop();
  }
  return out;
}

template <typename ScoreFn, typename IdFn>
RankedList select_top_k(std::size_t n, std::size_t k, ScoreFn&& score_of, IdFn&& id_of) {
  return select_top_k(n, k, std::forward<ScoreFn>(score_of), std::forward<IdFn>(id_of),
                      [](std::size_t) { return true; });
}

// TREC run lines: "query_id Q0 candidate_id rank score run_tag", rank from 1.
inline void write_run(std::ostream& os, const ItemId& query, const RankedList& ranked,
                      const std::string& tag) {
  std::size_t rank = 1;
  for (const auto& e : ranked) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), e.score);
    os << query << " Q0 " << e.id << ' ' << rank++ << ' ' << std::string_view(buf, end - buf)
       << ' ' << tag << '\n';
  }
}

/// Parses a run file into per-query lists ordered by the rank column.
namespace detail {
struct RunRow {
  std::size_t rank = 0;
  ScoredItem item;
};
}  // namespace detail

inline std::map<ItemId, RankedList> read_run(std::istream& is) {
  using Row = detail::RunRow;
  std::map<ItemId, std::vector<Row>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream f(line);
    std::string q, q0, doc, rank_s, score_s, tag;
    if (!(f >> q)) continue;
    if (!(f >> q0 >> doc >> rank_s >> score_s >> tag))
      throw ParseError("expected 'query_id Q0 candidate_id rank score run_tag'", lineno);
    Row r{};
    double score = 0.0;
    {
      auto [p, ec] = std::from_chars(rank_s.data(), rank_s.data() + rank_s.size(), r.rank);
      if (ec != std::errc() || p != rank_s.data() + rank_s.size())
        throw ParseError("bad rank '" + rank_s + "'", lineno);
    }
    {
      auto [p, ec] = std::from_chars(score_s.data(), score_s.data() + score_s.size(), score);
      if (ec != std::errc() || p != score_s.data() + score_s.size())
        throw ParseError("bad score '" + score_s + "'", lineno);
    }
    r.item = {doc, score};
    rows[q].push_back(std::move(r));
  }
  std::map<ItemId, RankedList> out;
  for (auto& [q, list] : rows) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Row& a, const Row& b) { return a.rank < b.rank; });
    auto& ranked = out[q];
    for (auto& r : list) ranked.entries.push_back(std::move(r.item));
  }
  return out;
}

}  // namespace dualenc
