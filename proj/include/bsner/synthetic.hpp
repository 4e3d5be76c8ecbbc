#pragma once

#include <string>
#include <vector>

#include "bsner/corpus.hpp"
#include "bsner/rng.hpp"

namespace bsner {

// Seeded synthetic NER corpora for convergence and calibration experiments.
//
// "Separable": three entity types, each with a dedicated word inventory
// disjoint from the filler words, so token identity fully determines entity
// membership and boundaries.
//
// "Boundary-noisy": the same sentences, but each gold span's start or end is
// shifted by one token with probability `noise_p` at generation time (clipped
// to stay a valid span). Tokens are untouched, so the noise is pure boundary
// label noise.
struct SyntheticConfig {
  int sentences = 500;
  int min_len = 6;
  int max_len = 12;
  double entity_rate = 0.8;   // chance of a second entity chunk
  double noise_p = 0.0;       // boundary shift probability per span
};

inline std::vector<Sentence> generate_synthetic(const SyntheticConfig& cfg, Rng& rng,
                                                Vocab* types = nullptr) {
  static const std::vector<std::string> kTypes = {"PER", "LOC", "ORG"};
  const int fillers = 30, per_type = 8;
  Vocab local;
  Vocab& tv = types ? *types : local;
  for (const auto& t : kTypes) tv.add_type(t);

  auto filler = [&](int k) { return "w" + std::to_string(k); };
  auto entity_word = [&](int type, int k) {
    static const char* prefix[] = {"per", "loc", "org"};
    return std::string(prefix[type]) + std::to_string(k);
  };

  std::vector<Sentence> out;
  for (int n = 0; n < cfg.sentences; ++n) {
    const int t_len =
        cfg.min_len + static_cast<int>(rng.index(static_cast<std::uint64_t>(
                          cfg.max_len - cfg.min_len + 1)));
    Sentence s;
    for (int i = 0; i < t_len; ++i)
      s.tokens.push_back(filler(static_cast<int>(rng.index(fillers))));

    const int n_entities = 1 + (rng.uniform() < cfg.entity_rate ? 1 : 0);
    std::vector<bool> used(t_len, false);
    for (int e = 0; e < n_entities; ++e) {
      const int type = static_cast<int>(rng.index(kTypes.size()));
      const int len = 1 + static_cast<int>(rng.index(3));
      if (len > t_len) continue;
      const int start = static_cast<int>(rng.index(static_cast<std::uint64_t>(t_len - len + 1)));
      // Keep a filler gap around chunks: adjacent same-type chunks would make
      // the boundary between them unrecoverable from the tokens.
      bool free = true;
      for (int i = std::max(0, start - 1); i < std::min(t_len, start + len + 1); ++i)
        if (used[i]) free = false;
      if (!free) continue;
      for (int i = start; i < start + len; ++i) {
        used[i] = true;
        s.tokens[i] = entity_word(type, static_cast<int>(rng.index(per_type)));
      }
      Span sp{start, start + len - 1, tv.type_to_id.at(kTypes[type])};
      if (cfg.noise_p > 0 && rng.uniform() < cfg.noise_p) {
        // Shift one boundary by +-1, keeping 0 <= start <= end < T.
        const bool move_start = rng.bernoulli(0.5);
        const int delta = rng.bernoulli(0.5) ? 1 : -1;
        if (move_start) {
          const int ns = sp.start + delta;
          if (ns >= 0 && ns <= sp.end) sp.start = ns;
        } else {
          const int ne = sp.end + delta;
          if (ne >= sp.start && ne < t_len) sp.end = ne;
        }
      }
      bool dup = false;
      for (const auto& prev : s.entities)
        if (prev.start == sp.start && prev.end == sp.end) dup = true;
      if (!dup) s.entities.push_back(sp);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bsner
