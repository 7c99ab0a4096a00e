// NDJSON scorer used by the tests. Answers from a truth score CSV.
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "irtimpute/io.hpp"
#include "json.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stub scorer"};
  std::string truth_path, garbage_learner, crash_marker;
  int offset = 0;
  bool as_string = false;
  app.add_option("--truth", truth_path)->required();
  app.add_option("--garbage-learner", garbage_learner, "Reply with a non-JSON line");
  app.add_option("--crash-marker", crash_marker, "Die on the first request unless this exists");
  app.add_option("--offset", offset, "Added to every prediction");
  app.add_flag("--as-string", as_string, "Send predictions as raw grader text");
  CLI11_PARSE(app, argc, argv);

  const auto truth = irtimpute::read_score_csv(truth_path);
  std::map<std::string, std::size_t> item, learner;
  for (std::size_t i = 0; i < truth.n_items(); ++i) item[truth.item_ids()[i]] = i;
  for (std::size_t j = 0; j < truth.n_learners(); ++j) learner[truth.learner_ids()[j]] = j;

  std::string line;
  while (std::getline(std::cin, line)) {
    if (!crash_marker.empty() && !std::ifstream(crash_marker)) {
      std::ofstream(crash_marker) << "crashed\n";
      return 1;
    }
    const auto req = nlohmann::json::parse(line);
    const auto item_id = req.at("item_id").get<std::string>();
    const auto learner_id = req.at("learner_id").get<std::string>();
    if (learner_id == garbage_learner) {
      std::cout << "I think this deserves a four" << std::endl;
      continue;
    }
    const int score = truth.at(item.at(item_id), learner.at(learner_id)) + offset;
    nlohmann::json resp{{"item_id", item_id}, {"learner_id", learner_id}};
    if (as_string)
      resp["predicted"] = " " + std::to_string(score) + "\n";
    else
      resp["predicted"] = score;
    std::cout << resp.dump() << std::endl;
  }
}
