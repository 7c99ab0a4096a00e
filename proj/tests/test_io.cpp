#include <sstream>

#include "doctest.h"
#include "irtimpute/designs.hpp"
#include "irtimpute/errors.hpp"
#include "irtimpute/estimation.hpp"
#include "irtimpute/io.hpp"
#include "irtimpute/synthetic.hpp"
#include "test_support.hpp"

using namespace irtimpute;
namespace t = irtimpute::testing;

namespace {

ScoreMatrix parse(const std::string& text, std::optional<int> k = std::nullopt) {
  std::istringstream in(text);
  return parse_score_csv(in, k, "m.csv");
}

std::string message_of(const std::string& text, std::optional<int> k = std::nullopt) {
  try {
    parse(text, k);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("score CSV parsing") {
  const auto m = parse("# K=5\nlearner_id,q1,q2\ns1,3,-1\ns2, 1 ,5\n");
  CHECK(m.n_items() == 2);
  CHECK(m.n_learners() == 2);
  CHECK(m.n_categories() == 5);
  CHECK(m.item_ids() == std::vector<std::string>{"q1", "q2"});
  CHECK(m.learner_ids() == std::vector<std::string>{"s1", "s2"});
  CHECK(m.at(0, 0) == 3);
  CHECK_FALSE(m.observed(1, 0));
  CHECK(m.at(1, 1) == 5);
}

TEST_CASE("K comes from the flag, then the comment, then the data") {
  const std::string body = "learner_id,q1\na,2\nb,3\n";
  CHECK(parse(body).n_categories() == 3);
  CHECK(parse("# K=6\n" + body).n_categories() == 6);
  CHECK(parse("# K=6\n" + body, 4).n_categories() == 4);
  CHECK(parse("learner_id,q1\na,1\n").n_categories() == 2);
}

TEST_CASE("bad cells are reported with their row and column") {
  const auto msg = message_of("# K=5\nlearner_id,q1,q2\ns1,3,9\n");
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("column 3 (q2)") != std::string::npos);
  CHECK_THROWS_AS(parse("# K=5\nlearner_id,q1,q2\ns1,3,9\n"), CategoryRangeError);
  // The flag wins, so a declared 5 does not save a 5 under K=4.
  CHECK_THROWS_AS(parse("# K=5\nlearner_id,q1\ns1,5\n", 4), CategoryRangeError);
  CHECK_THROWS_AS(parse("learner_id,q1\ns1,x\n"), ParseError);
  CHECK_THROWS_AS(parse("learner_id,q1\ns1,2.5\n"), ParseError);
  CHECK_THROWS_AS(parse("learner_id,q1\ns1,0\n"), CategoryRangeError);
  CHECK_THROWS_AS(parse("learner_id,q1,q2\ns1,3\n"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("learner_id,q1\n"), ParseError);
  CHECK_THROWS_AS(read_score_csv("/nonexistent/m.csv"), IoError);
}

TEST_CASE("score, mask, corpus and parameter files round-trip") {
  t::TempDir dir;
  GenConfig c;
  c.n_items = 3;
  c.n_learners = 21;
  c.n_categories = 4;
  const auto data = generate(c);
  const auto design = systematic_design(DesignGenerator::Systematic62, 3, 21);
  const auto masked = apply_design(data.scores, design);

  write_score_csv(dir / "m.csv", masked);
  CHECK(read_score_csv(dir / "m.csv") == masked);

  write_mask_csv(dir / "sub/mask.csv", design, masked.item_ids(), masked.learner_ids());
  CHECK(read_mask_csv(dir / "sub/mask.csv").mask == design.mask);

  auto corpus = attach_oracle_corpus(data.scores).corpus();
  corpus.reference_answers[1] = "model answer";
  corpus.item_rubrics[2] = "one point per idea";
  write_corpus_dir(dir / "corpus", corpus);
  const auto back = read_corpus_dir(dir / "corpus", data.scores);
  CHECK(back.texts == corpus.texts);
  CHECK(back.reference_answers == corpus.reference_answers);
  CHECK(back.item_rubrics == corpus.item_rubrics);
  CHECK(back.item_prompts == corpus.item_prompts);

  write_json_file(dir / "params.json", params_to_json(data.items, data.scores.item_ids()));
  CHECK(params_from_json(read_json_file(dir / "params.json")) == data.items);

  const auto fit = fit_gpcm(data.scores);
  write_json_file(dir / "fit.json", fit_to_json(fit, data.scores));
  const auto abil = read_abilities_json(dir / "fit.json");
  CHECK(abil.abilities.values == fit.abilities.values);
  CHECK(abil.learner_ids == data.scores.learner_ids());
  CHECK(params_from_json(read_json_file(dir / "fit.json")) == fit.items);
}

TEST_CASE("corpus files naming unknown items or learners are rejected") {
  t::TempDir dir;
  const auto m = parse("learner_id,q1\na,1\nb,2\n");
  write_text_file(dir / "c/q9.json", R"({"item_id": "q9", "answers": {}})");
  CHECK_THROWS_AS(read_corpus_dir(dir / "c", m), DataError);
  write_text_file(dir / "d/q1.json", R"({"item_id": "q1", "answers": {"zz": "hi"}})");
  CHECK_THROWS_AS(read_corpus_dir(dir / "d", m), DataError);
  CHECK_THROWS_AS(read_corpus_dir(dir / "none", m), IoError);
}
