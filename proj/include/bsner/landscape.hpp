#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bsner/checkpoint.hpp"
#include "bsner/training.hpp"

namespace bsner {

struct LandscapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DirectionMode { kPerWeight, kPerTensor };

inline DirectionMode direction_mode_from_string(const std::string& s) {
  if (s == "per_weight") return DirectionMode::kPerWeight;
  if (s == "per_tensor") return DirectionMode::kPerTensor;
  throw LandscapeError("unknown direction mode '" + s + "'");
}

// A random parameter-space direction, shape-congruent with a checkpoint.
struct Direction {
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
  std::uint64_t seed = 0;
};

// Standard-normal draw per scalar, then normalization against the trained
// parameters: per-weight forces |delta_i| = |theta_i| (keeping the draw's
// sign, and 0 where theta_i is 0); per-tensor rescales each named tensor to
// the trained tensor's L2 norm.
inline Direction sample_direction(const Checkpoint& ck, std::uint64_t seed,
                                  DirectionMode mode) {
  Rng rng(seed);
  Direction dir;
  dir.seed = seed;
  for (const auto& [name, theta] : ck.tensors) {
    std::vector<float> delta(theta.size());
    for (auto& v : delta) v = static_cast<float>(rng.normal());
    if (mode == DirectionMode::kPerWeight) {
      for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = theta[i] == 0.0f ? 0.0f : std::copysign(std::abs(theta[i]), delta[i]);
    } else {
      double tn = 0.0, dn = 0.0;
      for (float v : theta) tn += static_cast<double>(v) * v;
      for (float v : delta) dn += static_cast<double>(v) * v;
      const double s = dn > 0 ? std::sqrt(tn / dn) : 0.0;
      for (auto& v : delta) v = static_cast<float>(v * s);
    }
    dir.tensors.emplace_back(name, std::move(delta));
  }
  return dir;
}

struct LandscapePoint {
  double alpha = 0.0;
  double loss = 0.0;  // NaN when evaluation blew up at this point
};

// 1-D slice f(alpha) = mean eval-mode loss at theta* + alpha * delta, over an
// odd grid of evenly spaced alphas in [-1, 1]. The checkpoint is never
// mutated; each point evaluates a private parameter copy.
inline std::vector<LandscapePoint> landscape_1d(const Checkpoint& ck, const Direction& dir,
                                                const std::vector<Sentence>& dataset,
                                                const TrainConfig& loss_cfg,
                                                int n_points = 51, bool lowercase = false) {
  if (n_points < 3 || n_points % 2 == 0)
    throw LandscapeError("landscape_1d: n_points must be odd and >= 3");
  if (dir.tensors.size() != ck.tensors.size())
    throw LandscapeError("landscape_1d: direction does not match checkpoint");

  std::vector<LandscapePoint> out;
  for (int k = 0; k < n_points; ++k) {
    const double alpha = -1.0 + 2.0 * k / (n_points - 1);
    Checkpoint shifted = ck;
    if (alpha != 0.0) {
      for (std::size_t t = 0; t < shifted.tensors.size(); ++t) {
        auto& data = shifted.tensors[t].second;
        const auto& delta = dir.tensors[t].second;
        if (data.size() != delta.size())
          throw LandscapeError("landscape_1d: size mismatch in tensor '" +
                               shifted.tensors[t].first + "'");
        for (std::size_t i = 0; i < data.size(); ++i)
          data[i] = static_cast<float>(data[i] + alpha * delta[i]);
      }
    }
    double loss;
    try {
      Model model = model_from_checkpoint(shifted);
      loss = detail::corpus_loss(model, dataset, ck.vocab, loss_cfg, lowercase);
      if (!std::isfinite(loss)) loss = std::nan("");
    } catch (const TensorError&) {
      loss = std::nan("");
    }
    out.push_back({alpha, loss});
  }
  return out;
}

// CSV rows sorted by (split, alpha): `alpha,split,loss`.
inline std::string landscape_csv(
    const std::vector<std::pair<std::string, std::vector<LandscapePoint>>>& curves) {
  std::ostringstream os;
  os << "alpha,split,loss\n";
  std::map<std::string, const std::vector<LandscapePoint>*> sorted;
  for (const auto& [split, pts] : curves) sorted[split] = &pts;
  for (const auto& [split, pts] : sorted)
    for (const auto& p : *pts) os << p.alpha << "," << split << "," << p.loss << "\n";
  return os.str();
}

}  // namespace bsner
