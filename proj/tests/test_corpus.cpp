#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bsner/corpus.hpp"
#include "bsner/rng.hpp"

using namespace bsner;

TEST_CASE("parse_conll: single-token runs") {
  Vocab types;
  auto sents = parse_conll("EU B-ORG\nrejects O\nGerman B-MISC\n", &types);
  REQUIRE(sents.size() == 1);
  const auto& s = sents[0];
  CHECK(s.tokens == std::vector<std::string>{"EU", "rejects", "German"});
  REQUIRE(s.entities.size() == 2);
  CHECK(s.entities[0] == Span{0, 0, types.type_to_id.at("ORG")});
  CHECK(s.entities[1] == Span{2, 2, types.type_to_id.at("MISC")});
}

TEST_CASE("parse_conll: multi-token run") {
  Vocab types;
  auto sents = parse_conll("New B-LOC\nYork I-LOC\n", &types);
  REQUIRE(sents.size() == 1);
  REQUIRE(sents[0].entities.size() == 1);
  CHECK(sents[0].entities[0] == Span{0, 1, types.type_to_id.at("LOC")});
}

TEST_CASE("parse_conll: lenient orphan I- starts a span") {
  // Hand simulation of the run rule: an I-X with no open span of type X
  // behaves like B-X.
  Vocab types;
  auto sents = parse_conll("York I-LOC\n", &types);
  REQUIRE(sents.size() == 1);
  REQUIRE(sents[0].entities.size() == 1);
  CHECK(sents[0].entities[0] == Span{0, 0, types.type_to_id.at("LOC")});

  // Type switch inside a run also opens a new span.
  auto sents2 = parse_conll("a B-PER\nb I-ORG\n", &types);
  REQUIRE(sents2[0].entities.size() == 2);
  CHECK(sents2[0].entities[0].end == 0);
  CHECK(sents2[0].entities[1].start == 1);
}

TEST_CASE("parse_conll: malformed tag errors with line number") {
  CHECK_THROWS_WITH_AS(parse_conll("a O\nb X-LOC\n"), doctest::Contains("line 2"),
                       CorpusError);
}

TEST_CASE("parse_conll: blank lines separate, -DOCSTART- skipped") {
  auto sents = parse_conll("-DOCSTART- O\n\na O\nb B-PER\n\nc O\n");
  REQUIRE(sents.size() == 2);
  CHECK(sents[0].tokens.size() == 2);
  CHECK(sents[1].tokens.size() == 1);
}

TEST_CASE("parse_jsonl: exclusive end converts to inclusive") {
  Vocab types;
  auto sents = parse_jsonl(
      R"({"tokens":["a","b","c"],"entities":[{"start":0,"end":2,"type":"PER"}]})", &types);
  REQUIRE(sents.size() == 1);
  REQUIRE(sents[0].entities.size() == 1);
  CHECK(sents[0].entities[0] == Span{0, 1, types.type_to_id.at("PER")});
}

TEST_CASE("parse_jsonl: empty entities and nesting") {
  auto none = parse_jsonl(R"({"tokens":["a"],"entities":[]})");
  CHECK(none[0].entities.empty());

  Vocab types;
  auto nested = parse_jsonl(
      R"({"tokens":["a","b","c","d"],"entities":[{"start":0,"end":3,"type":"A"},{"start":1,"end":2,"type":"B"}]})",
      &types);
  CHECK(nested[0].entities.size() == 2);
}

TEST_CASE("parse_jsonl: bad ranges error with line number") {
  CHECK_THROWS_WITH_AS(
      parse_jsonl("{\"tokens\":[\"a\"],\"entities\":[]}\n"
                  R"({"tokens":["a"],"entities":[{"start":0,"end":0,"type":"A"}]})"),
      doctest::Contains("line 2"), CorpusError);
  CHECK_THROWS_AS(
      parse_jsonl(R"({"tokens":["a"],"entities":[{"start":0,"end":2,"type":"A"}]})"),
      CorpusError);
}

TEST_CASE("parse_jsonl: closed type set rejects unknown types") {
  Vocab types;
  types.add_type("PER");
  CHECK_THROWS_AS(
      parse_jsonl(R"({"tokens":["a"],"entities":[{"start":0,"end":1,"type":"LOC"}]})",
                  &types, true),
      CorpusError);
}

TEST_CASE("duplicate (start,end,type) triples are rejected") {
  CHECK_THROWS_AS(
      parse_jsonl(
          R"({"tokens":["a","b"],"entities":[{"start":0,"end":1,"type":"A"},{"start":0,"end":1,"type":"A"}]})"),
      CorpusError);
}

TEST_CASE("jsonl round-trip is the identity on sentences") {
  Rng rng(4242);
  Vocab types;
  types.add_type("PER");
  types.add_type("LOC");
  std::vector<Sentence> corpus;
  for (int n = 0; n < 50; ++n) {
    Sentence s;
    const int t_len = 1 + static_cast<int>(rng.index(9));
    for (int i = 0; i < t_len; ++i) s.tokens.push_back("tok" + std::to_string(rng.index(12)));
    const int n_ent = static_cast<int>(rng.index(3));
    for (int e = 0; e < n_ent; ++e) {
      int i = static_cast<int>(rng.index(t_len));
      int j = i + static_cast<int>(rng.index(t_len - i));
      Span sp{i, j, 1 + static_cast<int>(rng.index(2))};
      bool dup = false;
      for (const auto& prev : s.entities)
        if (prev == sp) dup = true;
      if (!dup) s.entities.push_back(sp);
    }
    corpus.push_back(std::move(s));
  }
  Vocab types2 = types;
  auto parsed = parse_jsonl(emit_jsonl(corpus, types), &types2);
  REQUIRE(parsed.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(parsed[i].tokens == corpus[i].tokens);
    CHECK(parsed[i].entities == corpus[i].entities);
  }
}

TEST_CASE("encoding never alters entity geometry") {
  Vocab types;
  auto sents = parse_jsonl(
      R"({"tokens":["rare","rare2","x"],"entities":[{"start":0,"end":2,"type":"PER"}]})",
      &types);
  auto vocab = build_vocab(sents, 5, false, &types);  // everything -> unknown
  auto ids = vocab.encode(sents[0]);
  CHECK(ids == std::vector<int>{Vocab::kUnk, Vocab::kUnk, Vocab::kUnk});
  CHECK(sents[0].entities[0] == Span{0, 1, 1});
}

TEST_CASE("build_vocab: min_freq and ties") {
  std::vector<Sentence> corpus{Sentence{{"a", "a", "b"}, {}}};
  auto v = build_vocab(corpus, 2);
  CHECK(v.token_to_id.count("a") == 1);
  CHECK(v.token_to_id.count("b") == 0);
  CHECK(v.token_id("b") == Vocab::kUnk);

  auto v1 = build_vocab(corpus, 1);
  CHECK(v1.token_to_id.count("a") == 1);
  CHECK(v1.token_to_id.count("b") == 1);

  // Frequency tie broken lexicographically.
  std::vector<Sentence> tie{Sentence{{"b", "a", "b", "a"}, {}}};
  auto vt = build_vocab(tie, 1);
  CHECK(vt.token_to_id.at("a") < vt.token_to_id.at("b"));
}

TEST_CASE("build_vocab: empty corpus errors") {
  CHECK_THROWS_AS(build_vocab({}, 1), CorpusError);
}
