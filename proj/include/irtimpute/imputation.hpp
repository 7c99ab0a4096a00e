#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "irtimpute/core_model.hpp"
#include "irtimpute/scorer.hpp"
#include "json.hpp"

namespace irtimpute {

enum class ImputationMethod { Mean, Mode, Knn, Scorer };

std::string to_string(ImputationMethod method);

struct ImputedCell {
  std::size_t item = 0;
  std::size_t learner = 0;
  int value = 0;
  // k-NN only: no eligible neighbor, so the item mean was used.
  bool fallback = false;
  std::optional<std::string> raw_output;
};

struct ImputationReport {
  ImputationMethod method = ImputationMethod::Mean;
  std::vector<std::string> item_ids;
  std::vector<std::string> learner_ids;
  // Item-major order, exactly the cells that were missing.
  std::vector<ImputedCell> cells;
  std::vector<std::size_t> per_item_counts;
  std::size_t fallback_count = 0;
  nlohmann::json settings = nlohmann::json::object();
};

nlohmann::json to_json(const ImputationReport& report);

using Imputed = std::pair<ScoreMatrix, ImputationReport>;

// Half-up rounding to the nearest category, clamped to [1, K].
int round_to_category(double value, int K);

// Throws NotImputableError if an item with missing cells has no
// observations.
Imputed impute_mean(const ScoreMatrix& scores);

// Modal category per item; ties go to the lower category.
Imputed impute_mode(const ScoreMatrix& scores);

enum class KnnWeighting {
  // 1/d over the k nearest. If any of them is at distance 0, the mean of
  // the zero-distance neighbors.
  InverseDistance,
  Uniform,
};

struct KnnConfig {
  std::size_t k = 5;
  KnnWeighting weighting = KnnWeighting::InverseDistance;
};

// Distance between two learners is the mean squared score difference over
// the items both observed in the input; learners sharing no item are not
// eligible. Neighbors must observe the target item. Only input
// observations are used, never earlier imputations.
Imputed impute_knn(const ScoreMatrix& scores, const KnnConfig& config = {});

// Fills every missing cell with the scorer's prediction. One scorer call per
// missing cell; a failed cell raises ScorerError naming it.
Imputed impute_with_scorer(const ScoreMatrix& scores, const AnswerCorpus& corpus,
                           Scorer& scorer, const BatchOptions& options = {});

}  // namespace irtimpute
