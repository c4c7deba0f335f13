#pragma once

// Tokenization, vocabulary construction and document-frequency statistics.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dualenc/common.hpp"

namespace dualenc {

using Token = std::string;

namespace detail {

// Length of the Unicode whitespace sequence starting at s[i], or 0.
inline std::size_t whitespace_length(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c == ' ' || (c >= '\t' && c <= '\r')) return 1;
  if (c == 0xC2 && i + 1 < s.size()) {
    const auto d = static_cast<unsigned char>(s[i + 1]);
    if (d == 0x85 || d == 0xA0) return 2;  // NEL, NBSP
    return 0;
  }
  if (i + 2 >= s.size()) return 0;
  const auto d = static_cast<unsigned char>(s[i + 1]);
  const auto e = static_cast<unsigned char>(s[i + 2]);
  if (c == 0xE1 && d == 0x9A && e == 0x80) return 3;  // U+1680
  if (c == 0xE2 && d == 0x80 &&
      (e <= 0x8A || e == 0xA8 || e == 0xA9 || e == 0xAF))
    return 3;  // U+2000..U+200A, U+2028, U+2029, U+202F
  if (c == 0xE2 && d == 0x81 && e == 0x9F) return 3;  // U+205F
  if (c == 0xE3 && d == 0x80 && e == 0x80) return 3;  // U+3000
  return 0;
}

inline bool is_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

inline void push_piece(std::string_view piece, std::vector<Token>& out) {
  std::size_t b = 0;
  std::size_t e = piece.size();
  while (b < e && is_punct(piece[b])) ++b;
  while (e > b && is_punct(piece[e - 1])) --e;
  if (b == e) return;
  Token t(piece.substr(b, e - b));
  for (char& c : t)
    if (static_cast<unsigned char>(c) < 0x80)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  out.push_back(std::move(t));
}

}  // namespace detail

/// Lowercased unigram tokens: split on Unicode whitespace, strip ASCII
/// punctuation from both ends of every piece and drop empty pieces.
/// Case folding covers ASCII letters only; other UTF-8 bytes pass through.
inline std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t w = detail::whitespace_length(text, i); w > 0) {
      detail::push_piece(text.substr(start, i - start), out);
      i += w;
      start = i;
    } else {
      ++i;
    }
  }
  detail::push_piece(text.substr(start), out);
  return out;
}

/// Smoothed inverse document frequency, ln((1 + N) / (1 + df)) + 1.
inline double smoothed_idf(std::size_t num_docs, std::size_t doc_freq) {
  return std::log((1.0 + static_cast<double>(num_docs)) /
                  (1.0 + static_cast<double>(doc_freq))) +
         1.0;
}

class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const noexcept { return id_to_token_.size(); }
  std::size_t num_docs() const noexcept { return num_docs_; }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  const Token& token(TokenId id) const { return id_to_token_.at(id); }
  std::size_t doc_freq(TokenId id) const { return doc_freq_.at(id); }

  // Out-of-vocabulary tokens have document frequency 0.
  std::size_t doc_freq(std::string_view token) const {
    auto id = find(token);
    return id ? doc_freq_[*id] : 0;
  }

  /// Ids of in-vocabulary tokens, in order; OOV tokens are dropped.
  std::vector<TokenId> ids(const std::vector<Token>& tokens) const {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens)
      if (auto id = find(t)) out.push_back(*id);
    return out;
  }

  /// Appends a token with the given document frequency and returns its id.
  TokenId add(Token token, std::size_t doc_freq) {
    if (token_to_id_.count(token)) throw Error("duplicate vocabulary token: " + token);
    const auto id = static_cast<TokenId>(id_to_token_.size());
    token_to_id_.emplace(token, id);
    id_to_token_.push_back(std::move(token));
    doc_freq_.push_back(doc_freq);
    return id;
  }

  void set_num_docs(std::size_t n) { num_docs_ = n; }

  bool operator==(const Vocabulary& o) const {
    return id_to_token_ == o.id_to_token_ && doc_freq_ == o.doc_freq_ &&
           num_docs_ == o.num_docs_;
  }

 private:
  std::unordered_map<Token, TokenId> token_to_id_;
  std::vector<Token> id_to_token_;
  std::vector<std::size_t> doc_freq_;
  std::size_t num_docs_ = 0;
};

/// Keeps tokens occurring at least `min_count` times in total. Ids are
/// assigned by descending frequency with lexicographic tie-breaking.
inline Vocabulary build_vocabulary(const std::vector<std::vector<Token>>& corpus,
                                   std::size_t min_count = 2) {
  if (min_count < 1) throw Error("min_count must be at least 1");
  std::unordered_map<Token, std::size_t> count;
  std::unordered_map<Token, std::size_t> df;
  for (const auto& doc : corpus) {
    std::unordered_set<std::string_view> seen;
    for (const auto& t : doc) {
      ++count[t];
      if (seen.insert(t).second) ++df[t];
    }
  }
  std::vector<std::pair<Token, std::size_t>> kept;
  for (auto& [tok, c] : count)
    if (c >= min_count) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, c] : kept) {
    const std::size_t f = df[tok];
    v.add(tok, f);
  }
  v.set_num_docs(corpus.size());
  return v;
}

inline double idf(const Vocabulary& vocab, std::string_view token) {
  if (vocab.num_docs() == 0) throw Error("idf requested from a vocabulary with no documents");
  return smoothed_idf(vocab.num_docs(), vocab.doc_freq(token));
}

// Text format: "#num_docs=<N>" then one "token<TAB>id<TAB>doc_freq" line per token.
inline void write_vocabulary(std::ostream& os, const Vocabulary& vocab) {
  os << "#num_docs=" << vocab.num_docs() << '\n';
  for (std::size_t i = 0; i < vocab.size(); ++i)
    os << vocab.token(static_cast<TokenId>(i)) << '\t' << i << '\t'
       << vocab.doc_freq(static_cast<TokenId>(i)) << '\n';
}

inline Vocabulary read_vocabulary(std::istream& is) {
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("#num_docs=", 0) == 0) {
      try {
        v.set_num_docs(std::stoull(line.substr(10)));
      } catch (const std::exception&) {
        throw ParseError("bad num_docs header", lineno);
      }
      have_header = true;
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError("expected token<TAB>id<TAB>doc_freq", lineno);
    std::size_t id = 0;
    std::size_t df = 0;
    try {
      id = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
      df = std::stoull(line.substr(t2 + 1));
    } catch (const std::exception&) {
      throw ParseError("non-numeric id or doc_freq", lineno);
    }
    if (id != v.size()) throw ParseError("vocabulary ids must be dense and ordered", lineno);
    v.add(line.substr(0, t1), df);
  }
  if (!have_header) throw ParseError("missing #num_docs header", 0);
  return v;
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_vocabulary(os, vocab);
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_vocabulary(is);
}

}  // namespace dualenc
