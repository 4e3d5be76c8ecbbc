#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "bsner/decode.hpp"
#include "bsner/rng.hpp"

using namespace bsner;

namespace {

// Independent reference decoder: materialize all candidates, sort by the
// stated key, then do an O(n^2) accept loop with its own overlap arithmetic.
std::vector<Span> reference_decode(const TargetMatrix& probs, DecodeMode mode) {
  struct Cand {
    Span span;
    double conf;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < probs.T; ++i)
    for (int j = i; j < probs.T; ++j) {
      const double* cell = probs.cell(i, j);
      int best = 0;
      for (int t = 1; t < probs.c; ++t)
        if (cell[t] > cell[best]) best = t;
      if (best != 0) cands.push_back({Span{i, j, best}, cell[best]});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.span.start != b.span.start) return a.span.start < b.span.start;
    if (a.span.end != b.span.end) return a.span.end < b.span.end;
    return a.span.type_id < b.span.type_id;
  });
  std::vector<Span> out;
  for (const auto& c : cands) {
    bool rejected = false;
    for (const Span& acc : out) {
      const int lo = std::max(c.span.start, acc.start);
      const int hi = std::min(c.span.end, acc.end);
      if (lo > hi) continue;  // disjoint
      if (mode == DecodeMode::kFlat) {
        rejected = true;
      } else {
        const bool contained = (acc.start <= c.span.start && c.span.end <= acc.end) ||
                               (c.span.start <= acc.start && acc.end <= c.span.end);
        if (!contained) rejected = true;
      }
      if (rejected) break;
    }
    if (!rejected) out.push_back(c.span);
  }
  return out;
}

TargetMatrix random_probs(Rng& rng, int t_len, int c) {
  TargetMatrix m(t_len, c);
  for (int i = 0; i < t_len; ++i)
    for (int j = i; j < t_len; ++j) {
      double sum = 0;
      std::vector<double> raw(c);
      for (int t = 0; t < c; ++t) {
        raw[t] = rng.uniform(0.01, 1.0);
        sum += raw[t];
      }
      for (int t = 0; t < c; ++t) m.cell(i, j)[t] = static_cast<float>(raw[t] / sum);
    }
  return m;
}

}  // namespace

TEST_CASE("clash definitions") {
  CHECK_FALSE(clash({0, 1, 1}, {2, 3, 1}, DecodeMode::kFlat));
  CHECK_FALSE(clash({0, 1, 1}, {2, 3, 1}, DecodeMode::kNested));

  // Containment: flat clashes, nested does not.
  CHECK(clash({0, 3, 1}, {1, 2, 1}, DecodeMode::kFlat));
  CHECK_FALSE(clash({0, 3, 1}, {1, 2, 1}, DecodeMode::kNested));

  // Partial overlap sharing one token: both clash.
  CHECK(clash({0, 2, 1}, {2, 4, 1}, DecodeMode::kFlat));
  CHECK(clash({0, 2, 1}, {2, 4, 1}, DecodeMode::kNested));
}

TEST_CASE("decode: all non-entity yields nothing") {
  TargetMatrix m(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) m.cell(i, j)[0] = 1.0f;
  CHECK(decode(m, DecodeMode::kFlat).empty());
  CHECK(decode(m, DecodeMode::kNested).empty());
}

TEST_CASE("decode: non-overlapping spans are kept in both modes") {
  TargetMatrix m(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) m.cell(i, j)[0] = 1.0f;
  auto set_ent = [&](int i, int j, float conf) {
    m.cell(i, j)[0] = 1 - conf;
    m.cell(i, j)[1] = conf;
  };
  set_ent(0, 1, 0.9f);
  set_ent(2, 3, 0.8f);
  for (auto mode : {DecodeMode::kFlat, DecodeMode::kNested}) {
    auto out = decode(m, mode);
    REQUIRE(out.size() == 2);
    CHECK(out[0].span == Span{0, 1, 1});
    CHECK(out[0].confidence == doctest::Approx(0.9f));
    CHECK(out[1].span == Span{2, 3, 1});
  }
}

TEST_CASE("decode: partial overlap drops the lower confidence in both modes") {
  TargetMatrix m(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) m.cell(i, j)[0] = 1.0f;
  m.cell(0, 2)[0] = 0.1f;
  m.cell(0, 2)[1] = 0.9f;
  m.cell(1, 3)[0] = 0.2f;
  m.cell(1, 3)[1] = 0.8f;
  for (auto mode : {DecodeMode::kFlat, DecodeMode::kNested}) {
    auto out = decode(m, mode);
    REQUIRE(out.size() == 1);
    CHECK(out[0].span == Span{0, 2, 1});
  }
}

TEST_CASE("decode: containment survives nested mode only") {
  TargetMatrix m(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) m.cell(i, j)[0] = 1.0f;
  m.cell(0, 3)[0] = 0.1f;
  m.cell(0, 3)[1] = 0.9f;
  m.cell(1, 2)[0] = 0.3f;
  m.cell(1, 2)[1] = 0.7f;
  CHECK(decode(m, DecodeMode::kFlat).size() == 1);
  CHECK(decode(m, DecodeMode::kNested).size() == 2);
}

TEST_CASE("decode: min-confidence filter") {
  TargetMatrix m(2, 2);
  m.cell(0, 0)[1] = 0.6f;
  m.cell(0, 0)[0] = 0.4f;
  m.cell(0, 1)[0] = 1.0f;
  m.cell(1, 1)[0] = 1.0f;
  CHECK(decode(m, DecodeMode::kFlat, 0, 0.0).size() == 1);
  CHECK(decode(m, DecodeMode::kFlat, 0, 0.7).empty());
  CHECK(decode(m, DecodeMode::kFlat, 0, 1.1).empty());
}

TEST_CASE("decode equals reference on random tensors; flat output disjoint") {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const int t_len = 1 + static_cast<int>(rng.index(6));
    const int c = 2 + static_cast<int>(rng.index(2));
    auto probs = random_probs(rng, t_len, c);
    for (auto mode : {DecodeMode::kFlat, DecodeMode::kNested}) {
      auto got = decode(probs, mode);
      auto want = reference_decode(probs, mode);
      REQUIRE(got.size() == want.size());
      for (std::size_t k = 0; k < got.size(); ++k) CHECK(got[k].span == want[k]);
      // Output must be pairwise clash-free under the active mode.
      for (std::size_t a = 0; a < got.size(); ++a)
        for (std::size_t b = a + 1; b < got.size(); ++b)
          CHECK_FALSE(clash(got[a].span, got[b].span, mode));
    }
  }
}

TEST_CASE("monotone confidence invariance") {
  // Scaling all entity-type probabilities by a common factor (renormalizing
  // against non-entity) preserves argmax classes and relative order, so the
  // decoded entity set is unchanged.
  Rng rng(321);
  for (int trial = 0; trial < 50; ++trial) {
    const int t_len = 2 + static_cast<int>(rng.index(4));
    auto probs = random_probs(rng, t_len, 3);
    TargetMatrix scaled = probs;
    for (int i = 0; i < t_len; ++i)
      for (int j = i; j < t_len; ++j) {
        double* cell = scaled.cell(i, j);
        double ent = 0;
        for (int t = 1; t < 3; ++t) {
          cell[t] *= 0.5f;
          ent += cell[t];
        }
        cell[0] = static_cast<float>(1.0 - ent);
      }
    // Only compare decoded sets where argmax classes were preserved.
    bool same_argmax = true;
    for (int i = 0; i < t_len && same_argmax; ++i)
      for (int j = i; j < t_len && same_argmax; ++j) {
        auto argmax = [](const double* cell) {
          int best = 0;
          for (int t = 1; t < 3; ++t)
            if (cell[t] > cell[best]) best = t;
          return best;
        };
        if (argmax(probs.cell(i, j)) != argmax(scaled.cell(i, j))) same_argmax = false;
      }
    if (!same_argmax) continue;
    auto a = decode(probs, DecodeMode::kFlat);
    auto b = decode(scaled, DecodeMode::kFlat);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].span == b[k].span);
  }
}

TEST_CASE("evaluate") {
  // Perfect prediction.
  std::vector<std::vector<Span>> gold{{{0, 1, 1}}, {{2, 3, 2}}};
  auto r = evaluate(gold, gold);
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(1.0));
  CHECK(r.f1 == doctest::Approx(1.0));

  // Empty predictions.
  std::vector<std::vector<Span>> none{{}, {}};
  auto r2 = evaluate(none, gold);
  CHECK(r2.precision == 0.0);
  CHECK(r2.recall == 0.0);
  CHECK(r2.f1 == 0.0);

  // 2 predictions, 1 correct, 2 gold.
  std::vector<std::vector<Span>> pred{{{0, 1, 1}, {0, 0, 2}}, {}};
  auto r3 = evaluate(pred, gold);
  CHECK(r3.precision == doctest::Approx(0.5));
  CHECK(r3.recall == doctest::Approx(0.5));
  CHECK(r3.f1 == doctest::Approx(0.5));

  CHECK_THROWS(evaluate({{}}, gold));
}
