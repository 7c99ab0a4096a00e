#include "irtimpute/synthetic.hpp"

#include <cmath>
#include <random>

#include "irtimpute/errors.hpp"

namespace irtimpute {

void validate(const GenConfig& config) {
  if (config.n_items < 1 || config.n_learners < 1)
    throw UsageError("synthetic data needs at least one item and one learner");
  if (config.n_categories < 2)
    throw UsageError("synthetic data needs at least two categories");
  if (config.step_spread < 0.0 || config.theta_sd < 0.0 || config.log_alpha_sd < 0.0 ||
      config.beta_sd < 0.0)
    throw UsageError("distribution spreads must be nonnegative");
}

ScoreMatrix sample_scores(std::span<const GpcmItemParams> items,
                          std::span<const double> thetas, std::uint64_t seed) {
  if (items.empty() || thetas.empty()) throw ShapeError("nothing to sample");
  const int K = items.front().n_categories();
  ScoreMatrix scores(items.size(), thetas.size(), K);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].n_categories() != K)
      throw ShapeError("items disagree on the number of categories");
    for (std::size_t j = 0; j < thetas.size(); ++j) {
      const auto p = gpcm_prob_vector(thetas[j], items[i]);
      const double u = unif(rng);
      double acc = 0.0;
      int k = 1;
      for (; k < K; ++k) {
        acc += p[static_cast<std::size_t>(k - 1)];
        if (u < acc) break;
      }
      scores.set(i, j, k);
    }
  }
  return scores;
}

SyntheticData generate(const GenConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto K = static_cast<std::size_t>(config.n_categories);

  SyntheticData data;
  data.items.reserve(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    GpcmItemParams item;
    item.discrimination = std::exp(config.log_alpha_mean + config.log_alpha_sd * normal(rng));
    item.difficulty = config.beta_mean + config.beta_sd * normal(rng);
    item.steps.assign(K, 0.0);
    double sum = 0.0;
    for (std::size_t m = 1; m < K; ++m) {
      item.steps[m] = config.step_spread * normal(rng);
      sum += item.steps[m];
    }
    const double shift = sum / static_cast<double>(K - 1);
    for (std::size_t m = 1; m < K; ++m) item.steps[m] -= shift;
    data.items.push_back(std::move(item));
  }

  auto& thetas = data.true_thetas.values;
  for (;;) {
    thetas.clear();
    for (std::size_t j = 0; j < config.n_learners; ++j)
      thetas.push_back(config.theta_mean + config.theta_sd * normal(rng));
    if (thetas.size() < 2 || config.theta_sd == 0.0) break;
    bool varied = false;
    for (double t : thetas) varied = varied || t != thetas.front();
    if (varied) break;
  }
  double mean = 0.0;
  for (double t : thetas) mean += t;
  mean /= static_cast<double>(thetas.size());
  double ss = 0.0;
  for (double t : thetas) ss += (t - mean) * (t - mean);
  data.true_thetas.mean = mean;
  data.true_thetas.variance = ss / static_cast<double>(thetas.size());

  data.scores = sample_scores(data.items, thetas, rng());
  return data;
}

OracleCorpus::OracleCorpus(const ScoreMatrix& complete)
    : corpus_(complete.n_items(), complete.n_learners()), truth_(complete) {
  if (!complete.is_complete())
    throw DataError("oracle corpus needs a complete score matrix");
  corpus_.item_ids = complete.item_ids();
  corpus_.learner_ids = complete.learner_ids();
  for (std::size_t i = 0; i < complete.n_items(); ++i) {
    corpus_.item_prompts[i] = "synthetic item " + complete.item_ids()[i];
    for (std::size_t j = 0; j < complete.n_learners(); ++j) {
      corpus_.text(i, j) = "synthetic answer: item=" + complete.item_ids()[i] +
                           " learner=" + complete.learner_ids()[j];
    }
  }
}

OracleCorpus attach_oracle_corpus(const ScoreMatrix& complete) {
  return OracleCorpus(complete);
}

}  // namespace irtimpute
