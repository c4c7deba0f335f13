#pragma once

// MAP@K against incomplete relevance judgments: anything not judged
// relevant counts as not relevant.

#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/ranking.hpp"
#include "dualenc/tasks.hpp"

namespace dualenc {

struct EvalReport {
  double map_at_k = 0.0;  // in [0, 1]
  std::map<ItemId, double> per_query_ap;
  std::size_t k = 100;
  std::size_t num_queries = 0;
};

/// (1/R) * sum over the top min(K, |ranked|) positions of precision@j * rel_j.
inline double average_precision_at_k(const RankedList& ranked, const std::set<ItemId>& relevant,
                                     std::size_t k, std::size_t r) {
  if (r < 1) throw Error("average_precision_at_k: R must be at least 1");
  if (k < 1) throw Error("average_precision_at_k: K must be at least 1");
  const std::size_t depth = std::min(k, ranked.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t j = 0; j < depth; ++j) {
    if (!relevant.count(ranked[j].id)) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(j + 1);
  }
  return sum / static_cast<double>(r);
}

/// Mean AP over the task queries. Per-query values are summed in query-id
/// order so the result does not depend on how the queries were listed.
inline EvalReport map_at_k(const std::map<ItemId, RankedList>& rankings,
                           const std::map<ItemId, std::set<ItemId>>& relevance,
                           const std::vector<ItemId>& queries, std::size_t k = 100) {
  std::vector<ItemId> missing;
  for (const auto& q : queries)
    if (!rankings.count(q)) missing.push_back(q);
  if (!missing.empty()) {
    std::string msg = "no ranking for " + std::to_string(missing.size()) + " queries:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw Error(msg);
  }
  EvalReport report;
  report.k = k;
  for (const auto& q : queries) {
    auto rel = relevance.find(q);
    if (rel == relevance.end()) throw Error("query '" + q + "' has no relevance judgments");
    report.per_query_ap[q] = average_precision_at_k(rankings.at(q), rel->second, k, rel->second.size());
  }
  report.num_queries = report.per_query_ap.size();
  double total = 0.0;
  for (const auto& [q, ap] : report.per_query_ap) total += ap;
  report.map_at_k = report.num_queries == 0 ? 0.0 : total / static_cast<double>(report.num_queries);
  return report;
}

inline EvalReport map_at_k(const std::map<ItemId, RankedList>& rankings,
                           const RetrievalTask& task, std::size_t k = 100) {
  return map_at_k(rankings, task.relevance, task.queries, k);
}

// Report lines: "metric<TAB>value", MAP in percentage points.
inline void write_report(std::ostream& os, const EvalReport& r) {
  os << "MAP@" << r.k << '\t' << format_percent(r.map_at_k) << '\n';
  os << "num_queries\t" << r.num_queries << '\n';
}

inline void write_per_query(std::ostream& os, const EvalReport& r) {
  os << "query_id\tAP@" << r.k << '\n';
  for (const auto& [q, ap] : r.per_query_ap) os << q << '\t' << format_double(ap) << '\n';
}

}  // namespace dualenc
