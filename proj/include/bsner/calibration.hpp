#pragma once

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bsner/decode.hpp"

namespace bsner {

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One confidence bin ((k-1)/K, k/K]. Precision and average confidence are
// meaningful only when count > 0.
struct CalibrationBin {
  int k = 0;  // 1..K
  double lower = 0.0;
  double upper = 0.0;
  long count = 0;
  long correct = 0;
  double precision = 0.0;
  double avg_confidence = 0.0;
};

// Groups predicted entities into K confidence bins and scores each bin's
// precision against gold by exact (start, end, type) match.
inline std::vector<CalibrationBin> bin_entities(
    const std::vector<PredictedEntity>& preds,
    const std::vector<std::vector<Span>>& gold, int bins) {
  if (bins < 1) throw CalibrationError("bin_entities: K must be >= 1");
  std::vector<CalibrationBin> out(bins);
  std::vector<double> conf_sum(bins, 0.0);
  for (int k = 0; k < bins; ++k) {
    out[k].k = k + 1;
    out[k].lower = static_cast<double>(k) / bins;
    out[k].upper = static_cast<double>(k + 1) / bins;
  }
  for (const auto& p : preds) {
    const double conf = p.confidence;
    if (!(conf > 0.0) || conf > 1.0)
      throw CalibrationError("bin_entities: confidence " + std::to_string(conf) +
                             " outside (0, 1]");
    // Half-open on the left: p in ((k-1)/K, k/K]. The small slack keeps
    // float-represented boundary values (e.g. 0.1f with K=10) in their bin.
    int k = static_cast<int>(std::ceil(conf * bins - 1e-6)) - 1;
    if (k < 0) k = 0;
    if (k >= bins) k = bins - 1;
    ++out[k].count;
    conf_sum[k] += conf;
    if (p.sentence_id < 0 || p.sentence_id >= static_cast<int>(gold.size()))
      throw CalibrationError("bin_entities: sentence id " + std::to_string(p.sentence_id) +
                             " outside gold corpus");
    for (const Span& gspan : gold[p.sentence_id])
      if (gspan == p.span) {
        ++out[k].correct;
        break;
      }
  }
  for (int k = 0; k < bins; ++k) {
    if (out[k].count > 0) {
      out[k].precision = static_cast<double>(out[k].correct) / out[k].count;
      out[k].avg_confidence = conf_sum[k] / out[k].count;
    }
  }
  return out;
}

// Expected calibration error: count-weighted average of |precision - avg
// confidence| across bins. Empty bins contribute nothing.
inline double ece(const std::vector<CalibrationBin>& bins) {
  long total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) throw CalibrationError("ece: no predictions");
  double acc = 0.0;
  for (const auto& b : bins)
    if (b.count > 0)
      acc += static_cast<double>(b.count) / total * std::abs(b.precision - b.avg_confidence);
  return acc;
}

// Reliability-diagram data. Empty bins emit empty precision/confidence fields.
inline std::string reliability_csv(const std::vector<CalibrationBin>& bins) {
  std::ostringstream os;
  os << "bin,lower,upper,count,precision,avg_confidence\n";
  for (const auto& b : bins) {
    os << b.k << "," << b.lower << "," << b.upper << "," << b.count << ",";
    if (b.count > 0)
      os << b.precision << "," << b.avg_confidence;
    else
      os << ",";
    os << "\n";
  }
  return os.str();
}

}  // namespace bsner
