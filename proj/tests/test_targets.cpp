#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "bsner/rng.hpp"
#include "bsner/targets.hpp"

using namespace bsner;

namespace {

// Independent brute-force construction of smoothed targets: enumerate every
// valid span, bucket by Manhattan distance, share mass, then normalize. Kept
// deliberately naive and separate from the implementation.
TargetMatrix oracle_smooth(const std::vector<Span>& entities, int t_len, int c, double eps,
                           int d_max) {
  std::vector<std::vector<double>> mass(TargetMatrix::span_count(t_len),
                                        std::vector<double>(c, 0.0));
  TargetMatrix shape(t_len, c);
  for (const Span& e : entities) {
    for (int d = 1; d <= d_max; ++d) {
      std::vector<int> members;
      for (int i = 0; i < t_len; ++i)
        for (int j = i; j < t_len; ++j)
          if (std::abs(i - e.start) + std::abs(j - e.end) == d)
            members.push_back(shape.span_index(i, j));
      if (members.empty()) {
        mass[shape.span_index(e.start, e.end)][e.type_id] += eps / d_max;
      } else {
        for (int idx : members)
          mass[idx][e.type_id] += eps / d_max / static_cast<double>(members.size());
      }
    }
    mass[shape.span_index(e.start, e.end)][e.type_id] += 1.0 - eps;
  }
  TargetMatrix out(t_len, c);
  for (int i = 0; i < t_len; ++i)
    for (int j = i; j < t_len; ++j) {
      const auto& m = mass[shape.span_index(i, j)];
      double s = 0;
      for (int t = 1; t < c; ++t) s += m[t];
      double* cell = out.cell(i, j);
      if (s <= 1.0) {
        cell[0] = 1.0 - s;
        for (int t = 1; t < c; ++t) cell[t] = m[t];
      } else {
        cell[0] = 0.0;
        for (int t = 1; t < c; ++t) cell[t] = m[t] / s;
      }
    }
  return out;
}

std::vector<Span> random_entities(Rng& rng, int t_len, int c, int max_entities) {
  std::vector<Span> out;
  const int n = static_cast<int>(rng.index(max_entities + 1));
  for (int k = 0; k < n; ++k) {
    int i = static_cast<int>(rng.index(t_len));
    int j = i + static_cast<int>(rng.index(t_len - i));
    Span sp{i, j, 1 + static_cast<int>(rng.index(c - 1))};
    bool conflict = false;
    for (const auto& prev : out)
      if (prev.start == sp.start && prev.end == sp.end) conflict = true;
    if (!conflict) out.push_back(sp);
  }
  return out;
}

}  // namespace

TEST_CASE("hard_targets basics") {
  auto m = hard_targets({{0, 1, 1}}, 2, 2);
  CHECK(m.cell(0, 1)[0] == 0.0f);
  CHECK(m.cell(0, 1)[1] == 1.0f);
  CHECK(m.cell(0, 0)[0] == 1.0f);
  CHECK(m.cell(1, 1)[0] == 1.0f);

  auto empty = hard_targets({}, 1, 3);
  CHECK(empty.cell(0, 0)[0] == 1.0f);
  CHECK(empty.cell(0, 0)[1] == 0.0f);
}

TEST_CASE("hard_targets: the ten-token two-entity example") {
  auto m = hard_targets({{1, 2, 1}, {3, 7, 2}}, 10, 3);
  CHECK(TargetMatrix::span_count(10) == 55);
  int entity_cells = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = i; j < 10; ++j)
      if (m.cell(i, j)[0] == 0.0f) ++entity_cells;
  CHECK(entity_cells == 2);
}

TEST_CASE("hard_targets rejects type conflicts at one span") {
  CHECK_THROWS_AS(hard_targets({{0, 1, 1}, {0, 1, 2}}, 3, 3), TargetError);
}

TEST_CASE("smooth_targets: epsilon 0 equals hard bitwise") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    int t_len = 1 + static_cast<int>(rng.index(8));
    auto ents = random_entities(rng, t_len, 3, 3);
    CHECK(smooth_targets(ents, t_len, 3, 0.0, 2) == hard_targets(ents, t_len, 3));
  }
}

TEST_CASE("smooth_targets: T=3 single entity ring") {
  auto m = smooth_targets({{0, 1, 1}}, 3, 2, 0.1, 1);
  CHECK(m.cell(0, 1)[1] == doctest::Approx(0.9));
  const double share = 0.1 / 3.0;
  CHECK(m.cell(0, 0)[1] == doctest::Approx(share));
  CHECK(m.cell(1, 1)[1] == doctest::Approx(share));
  CHECK(m.cell(0, 2)[1] == doctest::Approx(share));
  CHECK(m.cell(2, 2)[1] == doctest::Approx(0.0));
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      double s = 0;
      for (int t = 0; t < 2; ++t) s += m.cell(i, j)[t];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("smooth_targets: ring memberships of the figure example") {
  // Ten tokens, (1,2) smoothed with D=1 and (3,7) with D=2.
  auto m1 = smooth_targets({{1, 2, 1}}, 10, 3, 0.1, 1);
  std::vector<std::pair<int, int>> ring1;
  for (int i = 0; i < 10; ++i)
    for (int j = i; j < 10; ++j)
      if (!(i == 1 && j == 2) && m1.cell(i, j)[1] > 0) ring1.emplace_back(i, j);
  CHECK(ring1 == std::vector<std::pair<int, int>>{{0, 2}, {1, 1}, {1, 3}, {2, 2}});

  auto m2 = smooth_targets({{3, 7, 2}}, 10, 3, 0.2, 2);
  int d1 = 0, d2 = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = i; j < 10; ++j) {
      if (m2.cell(i, j)[2] <= 0 || (i == 3 && j == 7)) continue;
      const int d = std::abs(i - 3) + std::abs(j - 7);
      if (d == 1) ++d1;
      if (d == 2) ++d2;
      CHECK(d <= 2);
    }
  CHECK(d1 == 4);  // full diamond, away from edges
  CHECK(d2 == 8);
}

TEST_CASE("smooth_targets: parameter validation") {
  CHECK_THROWS_AS(smooth_targets({}, 3, 2, 1.0, 1), TargetError);
  CHECK_THROWS_AS(smooth_targets({}, 3, 2, -0.1, 1), TargetError);
  CHECK_THROWS_AS(smooth_targets({}, 3, 2, 0.1, 0), TargetError);
}

TEST_CASE("smooth_targets matches brute-force oracle on random cases") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int t_len = 1 + static_cast<int>(rng.index(8));
    const double eps = std::vector<double>{0.1, 0.2, 0.3}[rng.index(3)];
    const int d_max = 1 + static_cast<int>(rng.index(2));
    auto ents = random_entities(rng, t_len, 4, 3);
    auto got = smooth_targets(ents, t_len, 4, eps, d_max);
    auto want = oracle_smooth(ents, t_len, 4, eps, d_max);
    REQUIRE(got.probs.size() == want.probs.size());
    for (std::size_t k = 0; k < got.probs.size(); ++k)
      CHECK(got.probs[k] == doctest::Approx(want.probs[k]).epsilon(1e-6));
  }
}

TEST_CASE("smoothing invariants: ring totals and mass conservation") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const int t_len = 4 + static_cast<int>(rng.index(5));
    const double eps = 0.3;
    const int d_max = 2;
    int i = static_cast<int>(rng.index(t_len));
    int j = i + static_cast<int>(rng.index(t_len - i));
    const Span e{i, j, 1};
    auto m = smooth_targets({e}, t_len, 2, eps, d_max);

    double total = 0;
    for (int a = 0; a < t_len; ++a)
      for (int b = a; b < t_len; ++b) {
        const int d = std::abs(a - e.start) + std::abs(b - e.end);
        CHECK((d <= d_max || m.cell(a, b)[1] == 0.0f));  // monotone locality
        total += m.cell(a, b)[1];
      }
    // Per-entity type mass is conserved (rings renormalized or returned).
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

    for (int d = 1; d <= d_max; ++d) {
      double ring_sum = 0;
      bool any = false;
      for (int a = 0; a < t_len; ++a)
        for (int b = a; b < t_len; ++b)
          if (std::abs(a - e.start) + std::abs(b - e.end) == d) {
            ring_sum += m.cell(a, b)[1];
            any = true;
          }
      if (any) CHECK(ring_sum == doctest::Approx(eps / d_max).epsilon(1e-9));
    }
  }
}

TEST_CASE("overlapping smoothing keeps every cell a probability vector") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const int t_len = 1 + static_cast<int>(rng.index(6));
    auto ents = random_entities(rng, t_len, 3, 4);
    auto m = smooth_targets(ents, t_len, 3, 0.3, 2);
    for (int i = 0; i < t_len; ++i)
      for (int j = i; j < t_len; ++j) {
        double s = 0;
        for (int t = 0; t < 3; ++t) {
          CHECK(m.cell(i, j)[t] >= 0.0f);
          s += m.cell(i, j)[t];
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("nominal ring share divides by 4d") {
  // Entity in the middle of a long sentence: all 4 d=1 neighbors valid, so
  // valid-members and nominal modes agree there.
  auto valid = smooth_targets({{4, 5, 1}}, 12, 2, 0.2, 1, RingShare::kValidMembers);
  auto nominal = smooth_targets({{4, 5, 1}}, 12, 2, 0.2, 1, RingShare::kNominal);
  CHECK(valid.cell(4, 4)[1] == doctest::Approx(nominal.cell(4, 4)[1]));

  // At the sentence edge the nominal mode drops invalid positions' mass.
  auto v_edge = smooth_targets({{0, 0, 1}}, 4, 2, 0.2, 1, RingShare::kValidMembers);
  auto n_edge = smooth_targets({{0, 0, 1}}, 4, 2, 0.2, 1, RingShare::kNominal);
  CHECK(v_edge.cell(0, 1)[1] == doctest::Approx(0.2));       // single valid member
  CHECK(n_edge.cell(0, 1)[1] == doctest::Approx(0.2 / 4));   // 4d nominal share
}

TEST_CASE("label_smooth_targets") {
  auto ents = std::vector<Span>{{0, 1, 1}};
  CHECK(label_smooth_targets(ents, 3, 2, 0.0) == hard_targets(ents, 3, 2));

  auto m = label_smooth_targets(ents, 3, 2, 0.2);
  CHECK(m.cell(0, 1)[0] == doctest::Approx(0.1));
  CHECK(m.cell(0, 1)[1] == doctest::Approx(0.9));

  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j)
      CHECK(m.cell(i, j)[0] + m.cell(i, j)[1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(label_smooth_targets(ents, 3, 2, 1.0), TargetError);
  CHECK_THROWS_AS(label_smooth_targets(ents, 3, 2, -0.5), TargetError);
}
