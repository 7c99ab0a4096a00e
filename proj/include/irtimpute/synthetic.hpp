#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "irtimpute/core_model.hpp"

namespace irtimpute {

// Distribution defaults are declared choices, not estimates from real data.
struct GenConfig {
  std::size_t n_items = 5;
  std::size_t n_learners = 500;
  int n_categories = 5;
  double theta_mean = 0.0;
  double theta_sd = 1.0;
  // log(alpha) ~ Normal(log_alpha_mean, log_alpha_sd)
  double log_alpha_mean = 0.0;
  double log_alpha_sd = 0.3;
  double beta_mean = 0.0;
  double beta_sd = 0.8;
  // Raw steps ~ Normal(0, step_spread), then centered; d_1 = 0.
  double step_spread = 0.5;
  std::uint64_t seed = 0;
};

void validate(const GenConfig& config);

struct SyntheticData {
  ScoreMatrix scores;
  std::vector<GpcmItemParams> items;
  AbilitySet true_thetas;
};

SyntheticData generate(const GenConfig& config);

// One draw per cell from the GPCM category distribution.
ScoreMatrix sample_scores(std::span<const GpcmItemParams> items,
                          std::span<const double> thetas, std::uint64_t seed);

// Placeholder answers keyed by (item, learner) plus the hidden true scores.
// Only scorers and accuracy analysis may look at truth; imputers receive
// the corpus alone.
class OracleCorpus {
 public:
  explicit OracleCorpus(const ScoreMatrix& complete);

  const AnswerCorpus& corpus() const noexcept { return corpus_; }
  const ScoreMatrix& truth() const noexcept { return truth_; }

 private:
  AnswerCorpus corpus_;
  ScoreMatrix truth_;
};

OracleCorpus attach_oracle_corpus(const ScoreMatrix& complete);

}  // namespace irtimpute
