#pragma once

// Turning labeled pair datasets into incomplete retrieval tasks: the positive
// pairs induce a graph whose connected components are the relevance sets.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dualenc/common.hpp"

namespace dualenc {

struct PairRecord {
  ItemId id1;
  ItemId id2;
  std::string text1;
  std::string text2;
  std::optional<int> label;

  bool positive() const { return !label || *label != 0; }
};

/// Disjoint-set forest over dense indices with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

  std::size_t size() const noexcept { return parent_.size(); }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

/// Connected components of the undirected graph given by `edges`. Members of
/// each component are sorted; components are ordered by their first member.
inline std::vector<std::vector<ItemId>> transitive_closure(
    const std::vector<std::pair<ItemId, ItemId>>& edges) {
  std::unordered_map<ItemId, std::size_t> index;
  std::vector<ItemId> names;
  auto intern = [&](const ItemId& id) {
    auto [it, inserted] = index.try_emplace(id, names.size());
    if (inserted) names.push_back(id);
    return it->second;
  };
  std::vector<std::pair<std::size_t, std::size_t>> dense;
  dense.reserve(edges.size());
  for (const auto& [a, b] : edges) dense.emplace_back(intern(a), intern(b));
  UnionFind uf(names.size());
  for (auto [a, b] : dense) uf.unite(a, b);

  std::map<std::size_t, std::vector<ItemId>> by_root;
  for (std::size_t i = 0; i < names.size(); ++i) by_root[uf.find(i)].push_back(names[i]);
  std::vector<std::vector<ItemId>> out;
  out.reserve(by_root.size());
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

/// Test queries, candidate pool and relevance judgments. Each query is also a
/// candidate and is relevant to itself.
struct RetrievalTask {
  std::vector<ItemId> queries;
  std::vector<std::pair<ItemId, std::string>> candidates;
  std::map<ItemId, std::set<ItemId>> relevance;

  std::size_t relevant_count(const ItemId& q) const {
    auto it = relevance.find(q);
    return it == relevance.end() ? 0 : it->second.size();
  }

  double mean_relevant() const {
    if (queries.empty()) return 0.0;
    double s = 0.0;
    for (const auto& q : queries) s += static_cast<double>(relevant_count(q));
    return s / static_cast<double>(queries.size());
  }

  const std::string& text_of(const ItemId& id) const {
    const auto pos = find_candidate(id);
    if (!pos) throw Error("unknown candidate id '" + id + "'");
    return candidates[*pos].second;
  }

  bool has_candidate(const ItemId& id) const { return find_candidate(id).has_value(); }

  /// Rebuilds the id lookup; call after editing `candidates`. Lookups fall
  /// back to a linear scan while the index is stale.
  void index_candidates() {
    position_.clear();
    for (std::size_t i = 0; i < candidates.size(); ++i) position_.emplace(candidates[i].first, i);
  }

  /// Checks the structural invariants; throws Error on the first violation.
  void validate() const {
    for (const auto& q : queries) {
      if (!has_candidate(q)) throw Error("query '" + q + "' is not a candidate");
      auto it = relevance.find(q);
      if (it == relevance.end() || it->second.empty())
        throw Error("query '" + q + "' has no relevant candidates");
      for (const auto& r : it->second)
        if (!has_candidate(r)) throw Error("relevant id '" + r + "' is not a candidate");
    }
  }

 private:
  std::optional<std::size_t> find_candidate(const ItemId& id) const {
    if (position_.size() == candidates.size()) {
      auto it = position_.find(id);
      if (it != position_.end() && candidates[it->second].first == id) return it->second;
    }
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].first == id) return i;
    return std::nullopt;
  }

  std::unordered_map<ItemId, std::size_t> position_;
};

/// Builds the retrieval task induced by a labeled test set: candidates are all
/// items seen, queries are items in some positive pair, and each query's
/// relevance set is its whole closure component (itself included).
inline RetrievalTask build_retrieval_task(const std::vector<PairRecord>& pairs) {
  RetrievalTask task;
  std::unordered_map<ItemId, std::size_t> seen;
  auto add_candidate = [&](const ItemId& id, const std::string& text) {
    if (seen.try_emplace(id, task.candidates.size()).second) task.candidates.emplace_back(id, text);
  };
  std::vector<std::pair<ItemId, ItemId>> edges;
  for (const auto& p : pairs) {
    add_candidate(p.id1, p.text1);
    add_candidate(p.id2, p.text2);
    if (p.positive()) edges.emplace_back(p.id1, p.id2);
  }
  if (edges.empty()) throw Error("cannot build a retrieval task without positive pairs");

  std::unordered_map<ItemId, bool> is_query;
  for (const auto& [a, b] : edges)
    for (const auto* id : {&a, &b})
      if (is_query.try_emplace(*id, true).second) task.queries.push_back(*id);

  for (const auto& component : transitive_closure(edges)) {
    const std::set<ItemId> members(component.begin(), component.end());
    for (const auto& id : component) task.relevance[id] = members;
  }
  task.index_candidates();
  return task;
}

enum class PairFormat { kQuoraTsv, kAskUbuntu, kParalex };

inline PairFormat parse_pair_format(std::string_view s) {
  if (s == "quora-tsv") return PairFormat::kQuoraTsv;
  if (s == "askubuntu") return PairFormat::kAskUbuntu;
  if (s == "paralex") return PairFormat::kParalex;
  throw Error("unknown format '" + std::string(s) + "' (expected quora-tsv, askubuntu or paralex)");
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline void chomp(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

// Maps each distinct text to the first id it was seen with and drops pairs
// whose two sides collapse to the same item.
class TextDeduplicator {
 public:
  ItemId canonical(const ItemId& id, const std::string& text) {
    return by_text_.try_emplace(text, id).first->second;
  }

  void push(std::vector<PairRecord>& out, const ItemId& id1, const std::string& t1,
            const ItemId& id2, const std::string& t2, std::optional<int> label) {
    PairRecord r{canonical(id1, t1), canonical(id2, t2), t1, t2, label};
    if (r.id1 != r.id2) out.push_back(std::move(r));
  }

 private:
  std::unordered_map<std::string, ItemId> by_text_;
};

inline std::vector<PairRecord> read_quora(std::istream& is) {
  std::vector<PairRecord> out;
  TextDeduplicator dedup;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    chomp(line);
    if (lineno == 1) continue;  // header
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 6)
      throw ParseError("expected 6 tab-separated fields, found " + std::to_string(f.size()), lineno);
    if (f[5] != "0" && f[5] != "1") throw ParseError("is_duplicate must be 0 or 1", lineno);
    if (f[1].empty() || f[2].empty()) throw ParseError("empty question id", lineno);
    dedup.push(out, f[1], f[3], f[2], f[4], f[5] == "1" ? 1 : 0);
  }
  return out;
}

inline std::vector<PairRecord> read_askubuntu(std::istream& titles, std::istream& pairs) {
  std::unordered_map<ItemId, std::string> title_of;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(titles, line)) {
    ++lineno;
    chomp(line);
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() < 2 || f[0].empty())
      throw ParseError("expected id<TAB>title[<TAB>body]", lineno);
    title_of[f[0]] = f[1];
  }

  auto ids_of = [](const std::string& field) {
    std::vector<ItemId> ids;
    std::istringstream ss(field);
    for (std::string id; ss >> id;) ids.push_back(id);
    return ids;
  };

  std::vector<PairRecord> out;
  TextDeduplicator dedup;
  lineno = 0;
  while (std::getline(pairs, line)) {
    ++lineno;
    chomp(line);
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() < 2 || f[0].empty())
      throw ParseError("expected id<TAB>positive ids", lineno);
    auto text = [&](const ItemId& id) -> const std::string& {
      auto it = title_of.find(id);
      if (it == title_of.end()) throw ParseError("no title for question id " + id, lineno);
      return it->second;
    };
    const ItemId& q = f[0];
    const auto positives = ids_of(f[1]);
    for (const auto& p : positives) dedup.push(out, q, text(q), p, text(p), 1);
    // Optional third column: candidate ids; those not listed as positive
    // become labeled negatives.
    if (f.size() >= 3)
      for (const auto& c : ids_of(f[2]))
        if (std::find(positives.begin(), positives.end(), c) == positives.end())
          dedup.push(out, q, text(q), c, text(c), 0);
  }
  return out;
}

inline std::vector<PairRecord> read_paralex(std::istream& is) {
  std::vector<PairRecord> out;
  TextDeduplicator dedup;
  std::unordered_map<std::string, ItemId> ids;
  auto id_for = [&](const std::string& text) {
    return ids.try_emplace(text, std::to_string(ids.size())).first->second;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    chomp(line);
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 2) throw ParseError("expected text1<TAB>text2", lineno);
    const ItemId a = id_for(f[0]);
    const ItemId b = id_for(f[1]);
    dedup.push(out, a, f[0], b, f[1], 1);
  }
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return is;
}

}  // namespace detail

/// Reads pair records. `titles_path` is required for askubuntu (question
/// titles file) and ignored otherwise. Items are deduplicated by exact text.
inline std::vector<PairRecord> load_pairs(const std::string& path, PairFormat format,
                                          const std::string& titles_path = {}) {
  auto is = detail::open_input(path);
  switch (format) {
    case PairFormat::kQuoraTsv: return detail::read_quora(is);
    case PairFormat::kParalex: return detail::read_paralex(is);
    case PairFormat::kAskUbuntu: {
      if (titles_path.empty()) throw Error("askubuntu format needs a titles file");
      auto titles = detail::open_input(titles_path);
      return detail::read_askubuntu(titles, is);
    }
  }
  throw Error("unhandled format");
}

namespace detail {
inline std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}
}  // namespace detail

// On disk: queries.txt (one id per line), candidates.tsv (id<TAB>text) and
// qrels.txt ("query_id 0 candidate_id 1").
inline void write_qrels(std::ostream& os, const RetrievalTask& task) {
  for (const auto& q : task.queries)
    for (const auto& r : task.relevance.at(q)) os << q << " 0 " << r << " 1\n";
}

inline void save_task(const std::filesystem::path& dir, const RetrievalTask& task) {
  std::filesystem::create_directories(dir);
  std::ofstream q(dir / "queries.txt");
  std::ofstream c(dir / "candidates.tsv");
  std::ofstream r(dir / "qrels.txt");
  if (!q || !c || !r) throw Error("cannot write task files under " + dir.string());
  for (const auto& id : task.queries) q << id << '\n';
  for (const auto& [id, text] : task.candidates) c << id << '\t' << detail::sanitize_field(text) << '\n';
  write_qrels(r, task);
}

/// Relevance judgments keyed by query, in first-seen query order.
struct Qrels {
  std::vector<ItemId> queries;
  std::map<ItemId, std::set<ItemId>> relevance;
};

inline Qrels read_qrels(std::istream& is) {
  Qrels out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream f(line);
    std::string q, iter, doc, rel;
    if (!(f >> q)) continue;
    if (!(f >> iter >> doc >> rel)) throw ParseError("expected 'query_id 0 candidate_id relevance'", lineno);
    int level = 0;
    try {
      level = std::stoi(rel);
    } catch (const std::exception&) {
      throw ParseError("non-numeric relevance '" + rel + "'", lineno);
    }
    auto [it, inserted] = out.relevance.try_emplace(q);
    if (inserted) out.queries.push_back(q);
    if (level > 0) it->second.insert(doc);
  }
  return out;
}

inline RetrievalTask load_task(const std::filesystem::path& dir) {
  RetrievalTask task;
  auto q = detail::open_input((dir / "queries.txt").string());
  auto c = detail::open_input((dir / "candidates.tsv").string());
  auto r = detail::open_input((dir / "qrels.txt").string());
  std::string line;
  while (std::getline(q, line)) {
    detail::chomp(line);
    if (!line.empty()) task.queries.push_back(line);
  }
  std::size_t lineno = 0;
  while (std::getline(c, line)) {
    ++lineno;
    detail::chomp(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("candidates.tsv: expected id<TAB>text", lineno);
    task.candidates.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  task.relevance = read_qrels(r).relevance;
  task.index_candidates();
  task.validate();
  return task;
}

}  // namespace dualenc
