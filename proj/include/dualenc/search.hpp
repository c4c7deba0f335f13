#pragma once

// Continuous retrieval: exhaustive cosine top-K over unit-normalized
// candidate encodings, and an 8-bit scalar-quantized index scored
// asymmetrically (full-precision query against decoded codes).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dualenc/common.hpp"
#include "dualenc/encoder.hpp"
#include "dualenc/parallel.hpp"
#include "dualenc/ranking.hpp"

namespace dualenc {

class CandidateIndex {
 public:
  CandidateIndex() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dimension() const noexcept { return vectors_.cols(); }
  const std::vector<ItemId>& ids() const noexcept { return ids_; }
  const Matrix& vectors() const noexcept { return vectors_; }
  bool is_zero(std::size_t row) const { return zero_[row] != 0; }

  static CandidateIndex from_parts(std::vector<ItemId> ids, Matrix vectors,
                                   std::vector<std::uint8_t> zero) {
    if (ids.size() != vectors.rows() || zero.size() != ids.size())
      throw Error("CandidateIndex: inconsistent part sizes");
    CandidateIndex idx;
    idx.ids_ = std::move(ids);
    idx.vectors_ = std::move(vectors);
    idx.zero_ = std::move(zero);
    return idx;
  }

 private:
  std::vector<ItemId> ids_;
  Matrix vectors_;                   // N x d, unit rows (zero rows flagged)
  std::vector<std::uint8_t> zero_;   // 1 where the encoding had zero norm
};

/// Normalizes every encoding to unit length. Zero vectors are flagged and
/// score 0 against every query.
inline CandidateIndex build_index(const std::vector<std::pair<ItemId, Vector>>& encodings) {
  const std::size_t n = encodings.size();
  const std::size_t d = n == 0 ? 0 : encodings.front().second.size();
  std::unordered_set<ItemId> seen;
  std::vector<ItemId> ids;
  ids.reserve(n);
  Matrix vectors(n, d);
  std::vector<std::uint8_t> zero(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [id, v] = encodings[i];
    if (!seen.insert(id).second) throw Error("build_index: duplicate id '" + id + "'");
    if (v.size() != d) throw Error("build_index: encoding of '" + id + "' has wrong dimension");
    ids.push_back(id);
    const double nv = norm(v);
    if (nv == 0.0) {
      zero[i] = 1;
      continue;
    }
    auto row = vectors.row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] = v[k] / nv;
  }
  return CandidateIndex::from_parts(std::move(ids), std::move(vectors), std::move(zero));
}

namespace detail {
inline Vector unit(std::span<const double> q) {
  Vector out(q.begin(), q.end());
  const double nq = norm(q);
  if (nq > 0.0)
    for (double& x : out) x /= nq;
  return out;
}
}  // namespace detail

/// Cosine against every candidate, top K by score then ascending id.
inline RankedList exhaustive_top_k(const CandidateIndex& index, std::span<const double> query,
                                   std::size_t k) {
  if (k < 1) throw Error("exhaustive_top_k: K must be at least 1");
  if (index.size() == 0) return {};
  if (query.size() != index.dimension())
    throw Error("exhaustive_top_k: query dimension " + std::to_string(query.size()) +
                " vs index dimension " + std::to_string(index.dimension()));
  const Vector q = detail::unit(query);
  const auto& ids = index.ids();
  return select_top_k(
      index.size(), k,
      [&](std::size_t i) { return index.is_zero(i) ? 0.0 : dot(q, index.vectors().row(i)); },
      [&](std::size_t i) -> const ItemId& { return ids[i]; });
}

/// Per-dimension affine 8-bit codes: value = min[k] + code * step[k].
class QuantizedIndex {
 public:
  QuantizedIndex() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dimension() const noexcept { return mins_.size(); }
  const std::vector<ItemId>& ids() const noexcept { return ids_; }
  const std::vector<double>& mins() const noexcept { return mins_; }
  const std::vector<double>& steps() const noexcept { return steps_; }
  bool is_zero(std::size_t row) const { return zero_[row] != 0; }

  std::span<const std::uint8_t> codes(std::size_t row) const {
    return {codes_.data() + row * dimension(), dimension()};
  }

  double decode(std::size_t row, std::size_t k) const {
    return mins_[k] + static_cast<double>(codes_[row * dimension() + k]) * steps_[k];
  }

  Vector decode(std::size_t row) const {
    Vector out(dimension());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = decode(row, k);
    return out;
  }

  static QuantizedIndex quantize(const CandidateIndex& index) {
    QuantizedIndex q;
    const std::size_t n = index.size();
    const std::size_t d = index.dimension();
    q.ids_ = index.ids();
    q.zero_.resize(n);
    q.mins_.assign(d, 0.0);
    q.steps_.assign(d, 0.0);
    q.codes_.assign(n * d, 0);
    std::vector<double> maxs(d, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      q.zero_[i] = index.is_zero(i) ? 1 : 0;
      if (index.is_zero(i)) continue;
      auto row = index.vectors().row(i);
      for (std::size_t k = 0; k < d; ++k) {
        if (!any || row[k] < q.mins_[k]) q.mins_[k] = row[k];
        if (!any || row[k] > maxs[k]) maxs[k] = row[k];
      }
      any = true;
    }
    for (std::size_t k = 0; k < d; ++k) q.steps_[k] = (maxs[k] - q.mins_[k]) / 255.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (q.zero_[i]) continue;
      auto row = index.vectors().row(i);
      for (std::size_t k = 0; k < d; ++k) {
        if (q.steps_[k] == 0.0) continue;
        const double c = std::round((row[k] - q.mins_[k]) / q.steps_[k]);
        q.codes_[i * d + k] = static_cast<std::uint8_t>(std::clamp(c, 0.0, 255.0));
      }
    }
    return q;
  }

  static QuantizedIndex from_parts(std::vector<ItemId> ids, std::vector<double> mins,
                                   std::vector<double> steps, std::vector<std::uint8_t> zero,
                                   std::vector<std::uint8_t> codes) {
    if (mins.size() != steps.size() || zero.size() != ids.size() ||
        codes.size() != ids.size() * mins.size())
      throw Error("QuantizedIndex: inconsistent part sizes");
    QuantizedIndex q;
    q.ids_ = std::move(ids);
    q.mins_ = std::move(mins);
    q.steps_ = std::move(steps);
    q.zero_ = std::move(zero);
    q.codes_ = std::move(codes);
    return q;
  }

  const std::vector<std::uint8_t>& raw_codes() const noexcept { return codes_; }

 private:
  std::vector<ItemId> ids_;
  std::vector<double> mins_;
  std::vector<double> steps_;
  std::vector<std::uint8_t> zero_;
  std::vector<std::uint8_t> codes_;  // N x d
};

/// Asymmetric approximate search: the unit query stays in full precision and
/// each candidate code is decoded per dimension.
inline RankedList quantized_top_k(const QuantizedIndex& index, std::span<const double> query,
                                  std::size_t k) {
  if (k < 1) throw Error("quantized_top_k: K must be at least 1");
  if (index.size() == 0) return {};
  if (query.size() != index.dimension())
    throw Error("quantized_top_k: query dimension " + std::to_string(query.size()) +
                " vs index dimension " + std::to_string(index.dimension()));
  const Vector q = detail::unit(query);
  const std::size_t d = index.dimension();
  double base = 0.0;
  Vector weight(d);
  for (std::size_t j = 0; j < d; ++j) {
    base += q[j] * index.mins()[j];
    weight[j] = q[j] * index.steps()[j];
  }
  const auto& ids = index.ids();
  return select_top_k(
      index.size(), k,
      [&](std::size_t i) {
        if (index.is_zero(i)) return 0.0;
        auto codes = index.codes(i);
        double s = base;
        for (std::size_t j = 0; j < d; ++j) s += weight[j] * static_cast<double>(codes[j]);
        return s;
      },
      [&](std::size_t i) -> const ItemId& { return ids[i]; });
}

/// Runs `search(query)` for every query over a worker pool; output order
/// follows the input order.
template <typename SearchFn>
std::vector<RankedList> search_all(const std::vector<Vector>& queries, std::size_t threads,
                                   SearchFn&& search) {
  std::vector<RankedList> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) { out[i] = search(queries[i]); });
  return out;
}

// Binary persistence. Layout: ASCII header line "N d flags" (flags bit 0 set
// for a quantized index), N id lines, then little-endian payload:
//   exhaustive: N zero-flag bytes, N*d float64 rows
//   quantized:  d float64 mins, d float64 steps, N zero-flag bytes, N*d uint8 codes
namespace detail {

inline void write_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated index payload", 0);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline void write_bytes(std::ostream& os, const std::vector<std::uint8_t>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

inline std::vector<std::uint8_t> read_bytes(std::istream& is, std::size_t n) {
  std::vector<std::uint8_t> v(n);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n)))
    throw ParseError("truncated index payload", 0);
  return v;
}

struct IndexHeader {
  std::size_t n = 0;
  std::size_t d = 0;
  unsigned flags = 0;
  std::vector<ItemId> ids;
};

inline IndexHeader read_index_header(std::istream& is) {
  IndexHeader h;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty index file", 1);
  std::istringstream f(line);
  if (!(f >> h.n >> h.d >> h.flags)) throw ParseError("expected 'N d flags' header", 1);
  h.ids.reserve(h.n);
  for (std::size_t i = 0; i < h.n; ++i) {
    if (!std::getline(is, line)) throw ParseError("missing id line", i + 2);
    h.ids.push_back(line);
  }
  return h;
}

inline void write_index_header(std::ostream& os, std::size_t n, std::size_t d, unsigned flags,
                               const std::vector<ItemId>& ids) {
  os << n << ' ' << d << ' ' << flags << '\n';
  for (const auto& id : ids) os << id << '\n';
}

}  // namespace detail

inline constexpr unsigned kQuantizedFlag = 1;

inline void write_index(std::ostream& os, const CandidateIndex& index) {
  detail::write_index_header(os, index.size(), index.dimension(), 0, index.ids());
  std::vector<std::uint8_t> zero(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) zero[i] = index.is_zero(i) ? 1 : 0;
  detail::write_bytes(os, zero);
  for (double v : index.vectors().data()) detail::write_f64(os, v);
}

inline void write_index(std::ostream& os, const QuantizedIndex& index) {
  detail::write_index_header(os, index.size(), index.dimension(), kQuantizedFlag, index.ids());
  for (double v : index.mins()) detail::write_f64(os, v);
  for (double v : index.steps()) detail::write_f64(os, v);
  std::vector<std::uint8_t> zero(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) zero[i] = index.is_zero(i) ? 1 : 0;
  detail::write_bytes(os, zero);
  detail::write_bytes(os, index.raw_codes());
}

inline CandidateIndex read_candidate_index(std::istream& is) {
  auto h = detail::read_index_header(is);
  if (h.flags & kQuantizedFlag) throw ParseError("index file holds a quantized index", 1);
  auto zero = detail::read_bytes(is, h.n);
  Matrix m(h.n, h.d);
  for (double& v : m.data()) v = detail::read_f64(is);
  return CandidateIndex::from_parts(std::move(h.ids), std::move(m), std::move(zero));
}

inline QuantizedIndex read_quantized_index(std::istream& is) {
  auto h = detail::read_index_header(is);
  if (!(h.flags & kQuantizedFlag)) throw ParseError("index file holds an exhaustive index", 1);
  std::vector<double> mins(h.d), steps(h.d);
  for (double& v : mins) v = detail::read_f64(is);
  for (double& v : steps) v = detail::read_f64(is);
  auto zero = detail::read_bytes(is, h.n);
  auto codes = detail::read_bytes(is, h.n * h.d);
  return QuantizedIndex::from_parts(std::move(h.ids), std::move(mins), std::move(steps),
                                    std::move(zero), std::move(codes));
}

/// Debug export in the embedding text format (decoded values for quantized).
inline void export_index_text(std::ostream& os, const CandidateIndex& index) {
  write_embeddings(os, index.ids(), EmbeddingTable(index.vectors()));
}

inline void export_index_text(std::ostream& os, const QuantizedIndex& index) {
  Matrix m(index.size(), index.dimension());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.is_zero(i)) continue;
    for (std::size_t k = 0; k < index.dimension(); ++k) m(i, k) = index.decode(i, k);
  }
  write_embeddings(os, index.ids(), EmbeddingTable(std::move(m)));
}

}  // namespace dualenc
