#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsner/corpus.hpp"

namespace bsner {

struct TargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-sentence probability assignment over (span, type). Only the upper
// triangle 0 <= i <= j < T exists; cells are length-c probability vectors with
// index 0 the non-entity class.
struct TargetMatrix {
  int T = 0;
  int c = 0;
  std::vector<double> probs;  // span_index(i,j) * c + t

  TargetMatrix() = default;
  TargetMatrix(int t_len, int type_count)
      : T(t_len), c(type_count),
        probs(static_cast<std::size_t>(span_count(t_len)) * type_count, 0.0) {}

  static int span_count(int t_len) { return t_len * (t_len + 1) / 2; }

  // Row-major over the upper triangle: (0,0),(0,1),...,(0,T-1),(1,1),...
  int span_index(int i, int j) const { return i * T - i * (i - 1) / 2 + (j - i); }

  double* cell(int i, int j) { return probs.data() + static_cast<std::size_t>(span_index(i, j)) * c; }
  const double* cell(int i, int j) const {
    return probs.data() + static_cast<std::size_t>(span_index(i, j)) * c;
  }

  friend bool operator==(const TargetMatrix&, const TargetMatrix&) = default;
};

// How the per-ring mass epsilon/D is divided among ring members.
//   kValidMembers: split equally among the valid spans of the ring.
//   kNominal: split by the nominal ring size 4d; mass of invalid positions is
//   dropped.
enum class RingShare { kValidMembers, kNominal };

namespace detail {

inline void check_entities(const std::vector<Span>& entities, int t_len, int c) {
  for (const Span& e : entities) {
    if (e.start < 0 || e.start > e.end || e.end >= t_len)
      throw TargetError("entity span (" + std::to_string(e.start) + "," +
                        std::to_string(e.end) + ") invalid for length " +
                        std::to_string(t_len));
    if (e.type_id < 1 || e.type_id >= c)
      throw TargetError("entity type id " + std::to_string(e.type_id) +
                        " out of range for c=" + std::to_string(c));
  }
  for (std::size_t a = 0; a < entities.size(); ++a)
    for (std::size_t b = a + 1; b < entities.size(); ++b)
      if (entities[a].start == entities[b].start && entities[a].end == entities[b].end &&
          entities[a].type_id != entities[b].type_id)
        throw TargetError("conflicting types at span (" + std::to_string(entities[a].start) +
                          "," + std::to_string(entities[a].end) + ")");
}

}  // namespace detail

// One-hot targets: probability 1 on the annotated type, elsewhere 1 on
// non-entity.
inline TargetMatrix hard_targets(const std::vector<Span>& entities, int t_len, int c) {
  detail::check_entities(entities, t_len, c);
  TargetMatrix m(t_len, c);
  for (int i = 0; i < t_len; ++i)
    for (int j = i; j < t_len; ++j) m.cell(i, j)[0] = 1.0f;
  for (const Span& e : entities) {
    double* cell = m.cell(e.start, e.end);
    cell[0] = 0.0;
    cell[e.type_id] = 1.0;
  }
  return m;
}

// Boundary-smoothed targets: each annotated entity keeps 1-epsilon at its
// span; each Manhattan-distance ring d = 1..D shares epsilon/D among its
// members. An empty ring returns its mass to the annotated span. After all
// entities, the non-entity probability absorbs the remainder; if entity mass
// from overlapping smoothed regions exceeds 1, the cell is rescaled.
inline TargetMatrix smooth_targets(const std::vector<Span>& entities, int t_len, int c,
                                   double epsilon, int smooth_size,
                                   RingShare share = RingShare::kValidMembers) {
  if (epsilon < 0.0 || epsilon >= 1.0)
    throw TargetError("smooth_targets: epsilon must be in [0, 1)");
  if (smooth_size < 1) throw TargetError("smooth_targets: D must be >= 1");
  detail::check_entities(entities, t_len, c);

  if (epsilon == 0.0) return hard_targets(entities, t_len, c);

  TargetMatrix m(t_len, c);
  std::vector<double> acc(m.probs.size(), 0.0);  // entity-type mass only
  auto at = [&](int i, int j, int t) -> double& {
    return acc[static_cast<std::size_t>(m.span_index(i, j)) * c + t];
  };

  const double per_ring = epsilon / smooth_size;
  for (const Span& e : entities) {
    double returned = 0.0;  // mass from empty rings
    for (int d = 1; d <= smooth_size; ++d) {
      std::vector<std::pair<int, int>> ring;
      // Ring members (i', j') with |i'-i| + |j'-j| = d, restricted to valid
      // spans 0 <= i' <= j' < T. d >= 1, so the span itself never appears.
      for (int di = -d; di <= d; ++di) {
        const int i2 = e.start + di;
        const int rest = d - std::abs(di);
        for (int dj = -rest; dj <= rest; dj += rest == 0 ? 1 : 2 * rest) {
          const int j2 = e.end + dj;
          if (i2 < 0 || j2 >= t_len || i2 > j2) continue;
          ring.emplace_back(i2, j2);
          if (rest == 0) break;
        }
      }
      if (ring.empty()) {
        returned += per_ring;
        continue;
      }
      const double share_denom =
          share == RingShare::kValidMembers ? static_cast<double>(ring.size()) : 4.0 * d;
      for (auto [i2, j2] : ring) at(i2, j2, e.type_id) += per_ring / share_denom;
    }
    at(e.start, e.end, e.type_id) += (1.0 - epsilon) + returned;
  }

  for (int i = 0; i < t_len; ++i)
    for (int j = i; j < t_len; ++j) {
      double s = 0.0;
      for (int t = 1; t < c; ++t) s += at(i, j, t);
      double* cell = m.cell(i, j);
      if (s <= 1.0) {
        cell[0] = 1.0 - s;
        for (int t = 1; t < c; ++t) cell[t] = at(i, j, t);
      } else {
        cell[0] = 0.0;
        for (int t = 1; t < c; ++t) cell[t] = at(i, j, t) / s;
      }
    }
  return m;
}

// Label smoothing at fixed span geometry: v -> (1-alpha)*v + alpha/c.
inline TargetMatrix label_smooth_targets(const std::vector<Span>& entities, int t_len, int c,
                                         double alpha) {
  if (alpha < 0.0 || alpha >= 1.0)
    throw TargetError("label_smooth_targets: alpha must be in [0, 1)");
  TargetMatrix m = hard_targets(entities, t_len, c);
  if (alpha == 0.0) return m;
  for (double& p : m.probs) p = (1.0 - alpha) * p + alpha / static_cast<double>(c);
  return m;
}

}  // namespace bsner
