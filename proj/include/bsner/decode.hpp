#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bsner/targets.hpp"

namespace bsner {

enum class DecodeMode { kFlat, kNested };

inline DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "flat") return DecodeMode::kFlat;
  if (s == "nested") return DecodeMode::kNested;
  throw std::runtime_error("unknown decode mode '" + s + "'");
}

struct PredictedEntity {
  Span span;
  double confidence = 0.0;
  int sentence_id = 0;
};

// Boundary clash between two spans. Flat: any token overlap. Nested: partial
// overlap only (overlap where neither span contains the other).
inline bool clash(const Span& a, const Span& b, DecodeMode mode) {
  const bool overlap = a.start <= b.end && b.start <= a.end;
  if (!overlap) return false;
  if (mode == DecodeMode::kFlat) return true;
  const bool a_in_b = b.start <= a.start && a.end <= b.end;
  const bool b_in_a = a.start <= b.start && b.end <= a.end;
  return !a_in_b && !b_in_a;
}

// Confidence-ranked greedy selection: drop non-entity argmax cells, sort the
// rest by (confidence desc, start, end, type), accept unless the span clashes
// with an already accepted one.
inline std::vector<PredictedEntity> decode(const TargetMatrix& probs, DecodeMode mode,
                                           int sentence_id = 0,
                                           double min_confidence = 0.0) {
  std::vector<PredictedEntity> cands;
  for (int i = 0; i < probs.T; ++i)
    for (int j = i; j < probs.T; ++j) {
      const double* cell = probs.cell(i, j);
      int best = 0;
      for (int t = 1; t < probs.c; ++t)
        if (cell[t] > cell[best]) best = t;
      if (best == 0) continue;
      if (cell[best] < min_confidence) continue;
      cands.push_back({Span{i, j, best}, cell[best], sentence_id});
    }
  std::sort(cands.begin(), cands.end(), [](const PredictedEntity& a, const PredictedEntity& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.span < b.span;
  });
  std::vector<PredictedEntity> accepted;
  for (const auto& cand : cands) {
    bool ok = true;
    for (const auto& acc : accepted)
      if (clash(cand.span, acc.span, mode)) {
        ok = false;
        break;
      }
    if (ok) accepted.push_back(cand);
  }
  return accepted;
}

struct EvalReport {
  long true_positives = 0;
  long predicted_count = 0;
  long gold_count = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged exact-match P/R/F1 over aligned sentence lists. A prediction
// counts iff (start, end, type) matches a gold span of the same sentence.
inline EvalReport evaluate(const std::vector<std::vector<Span>>& pred,
                           const std::vector<std::vector<Span>>& gold) {
  if (pred.size() != gold.size())
    throw std::runtime_error("evaluate: prediction/gold sentence counts differ (" +
                             std::to_string(pred.size()) + " vs " +
                             std::to_string(gold.size()) + ")");
  EvalReport r;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    std::set<std::tuple<int, int, int>> gold_set;
    for (const Span& sp : gold[s]) gold_set.insert({sp.start, sp.end, sp.type_id});
    r.gold_count += static_cast<long>(gold_set.size());
    r.predicted_count += static_cast<long>(pred[s].size());
    for (const Span& sp : pred[s])
      if (gold_set.count({sp.start, sp.end, sp.type_id})) ++r.true_positives;
  }
  r.precision = r.predicted_count ? static_cast<double>(r.true_positives) / r.predicted_count : 0.0;
  r.recall = r.gold_count ? static_cast<double>(r.true_positives) / r.gold_count : 0.0;
  r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

}  // namespace bsner
