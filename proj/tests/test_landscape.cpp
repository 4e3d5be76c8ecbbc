#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bsner/landscape.hpp"
#include "bsner/synthetic.hpp"

using namespace bsner;

namespace {

struct Fixture {
  Checkpoint ck;
  std::vector<Sentence> data;
  Vocab vocab;

  Fixture() {
    Rng rng(9);
    Vocab types;
    SyntheticConfig scfg;
    scfg.sentences = 12;
    data = generate_synthetic(scfg, rng, &types);
    vocab = build_vocab(data, 1, false, &types);
    ModelConfig cfg;
    cfg.vocab_size = vocab.token_count();
    cfg.embed_dim = 6;
    cfg.lstm_hidden = 4;
    cfg.affine_hidden = 4;
    cfg.width_embed_dim = 3;
    cfg.max_width = 12;
    cfg.type_count = vocab.type_count();
    Model model(cfg);
    model.init(rng);
    ck = checkpoint_from_model(model, vocab);
  }
};

}  // namespace

TEST_CASE("per-weight direction magnitudes match the parameters") {
  Fixture fx;
  auto dir = sample_direction(fx.ck, 3, DirectionMode::kPerWeight);
  REQUIRE(dir.tensors.size() == fx.ck.tensors.size());
  for (std::size_t k = 0; k < dir.tensors.size(); ++k)
    for (std::size_t i = 0; i < dir.tensors[k].second.size(); ++i)
      CHECK(std::abs(dir.tensors[k].second[i]) ==
            doctest::Approx(std::abs(fx.ck.tensors[k].second[i])));
}

TEST_CASE("per-weight direction: zero weight maps to zero direction") {
  Fixture fx;
  fx.ck.tensors[0].second[0] = 0.0f;
  auto dir = sample_direction(fx.ck, 3, DirectionMode::kPerWeight);
  CHECK(dir.tensors[0].second[0] == 0.0f);
}

TEST_CASE("per-tensor direction norms match per tensor") {
  Fixture fx;
  auto dir = sample_direction(fx.ck, 4, DirectionMode::kPerTensor);
  for (std::size_t k = 0; k < dir.tensors.size(); ++k) {
    double tn = 0, dn = 0;
    for (float v : fx.ck.tensors[k].second) tn += static_cast<double>(v) * v;
    for (float v : dir.tensors[k].second) dn += static_cast<double>(v) * v;
    CHECK(std::sqrt(dn) == doctest::Approx(std::sqrt(tn)).epsilon(1e-5));
  }
}

TEST_CASE("same seed gives the identical direction") {
  Fixture fx;
  auto d1 = sample_direction(fx.ck, 11, DirectionMode::kPerWeight);
  auto d2 = sample_direction(fx.ck, 11, DirectionMode::kPerWeight);
  for (std::size_t k = 0; k < d1.tensors.size(); ++k)
    CHECK(d1.tensors[k].second == d2.tensors[k].second);
}

TEST_CASE("f(0) equals the unperturbed eval loss bitwise; checkpoint untouched") {
  Fixture fx;
  auto before = fx.ck.tensors;
  auto dir = sample_direction(fx.ck, 5, DirectionMode::kPerWeight);
  TrainConfig loss_cfg;
  auto points = landscape_1d(fx.ck, dir, fx.data, loss_cfg, 5);
  REQUIRE(points.size() == 5);

  Model model = model_from_checkpoint(fx.ck);
  const double plain = detail::corpus_loss(model, fx.data, fx.ck.vocab, loss_cfg, false);
  CHECK(points[2].alpha == 0.0);
  CHECK(points[2].loss == plain);  // bitwise
  CHECK(fx.ck.tensors == before);
}

TEST_CASE("alpha grid: 51 points spans [-1, 1] evenly; 3 points is {-1,0,1}") {
  Fixture fx;
  auto dir = sample_direction(fx.ck, 5, DirectionMode::kPerWeight);
  TrainConfig loss_cfg;
  auto p3 = landscape_1d(fx.ck, dir, {fx.data[0]}, loss_cfg, 3);
  CHECK(p3[0].alpha == doctest::Approx(-1.0));
  CHECK(p3[1].alpha == doctest::Approx(0.0));
  CHECK(p3[2].alpha == doctest::Approx(1.0));

  auto p51 = landscape_1d(fx.ck, dir, {fx.data[0]}, loss_cfg, 51);
  REQUIRE(p51.size() == 51);
  for (int k = 0; k < 51; ++k)
    CHECK(p51[k].alpha == doctest::Approx(-1.0 + 0.04 * k).epsilon(1e-12));
}

TEST_CASE("zero direction gives a constant curve") {
  Fixture fx;
  Direction dir;
  for (const auto& [name, data] : fx.ck.tensors)
    dir.tensors.emplace_back(name, std::vector<float>(data.size(), 0.0f));
  TrainConfig loss_cfg;
  auto points = landscape_1d(fx.ck, dir, {fx.data[0], fx.data[1]}, loss_cfg, 5);
  for (const auto& p : points) CHECK(p.loss == points[0].loss);
}

TEST_CASE("even or tiny point counts are rejected") {
  Fixture fx;
  auto dir = sample_direction(fx.ck, 5, DirectionMode::kPerWeight);
  TrainConfig loss_cfg;
  CHECK_THROWS_AS(landscape_1d(fx.ck, dir, fx.data, loss_cfg, 50), LandscapeError);
  CHECK_THROWS_AS(landscape_1d(fx.ck, dir, fx.data, loss_cfg, 1), LandscapeError);
}

TEST_CASE("landscape csv: row count and ordering") {
  std::vector<LandscapePoint> a{{-1, 1.0}, {0, 0.5}, {1, 1.5}};
  auto csv = landscape_csv({{"train", a}, {"dev", a}, {"test", a}});
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "alpha,split,loss");
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line);
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == "-1,dev,1");   // sorted by (split, alpha)
  CHECK(rows[3] == "-1,test,1");
  CHECK(rows[6] == "-1,train,1");

  // Round trip of the numeric fields.
  std::istringstream ls(rows[1]);
  std::string f;
  std::getline(ls, f, ',');
  CHECK(std::stod(f) == doctest::Approx(0.0));
  std::getline(ls, f, ',');
  std::getline(ls, f, ',');
  CHECK(std::stod(f) == doctest::Approx(0.5));
}
