#include "irtimpute/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "irtimpute/errors.hpp"

namespace irtimpute {

namespace {

std::vector<std::string> numbered(const std::string& prefix, std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) ids.push_back(prefix + std::to_string(k));
  return ids;
}

}  // namespace

ScoreMatrix::ScoreMatrix(std::size_t n_items, std::size_t n_learners,
                         int n_categories)
    : n_items_(n_items),
      n_learners_(n_learners),
      n_categories_(n_categories),
      cells_(n_items * n_learners, kMissing),
      item_ids_(numbered("item_", n_items)),
      learner_ids_(numbered("", n_learners)) {
  if (n_items < 1 || n_learners < 1)
    throw ShapeError("score matrix needs at least one item and one learner");
  if (n_categories < 2)
    throw CategoryRangeError("score matrix needs at least two categories, got " +
                             std::to_string(n_categories));
}

ScoreMatrix ScoreMatrix::from_items(int n_categories,
                                    const std::vector<std::vector<int>>& rows) {
  if (rows.empty()) throw ShapeError("score matrix needs at least one item");
  ScoreMatrix m(rows.size(), rows.front().size(), n_categories);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.n_learners())
      throw ShapeError("ragged score rows: item " + std::to_string(i + 1));
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      if (rows[i][j] != kMissing) m.set(i, j, rows[i][j]);
    }
  }
  return m;
}

void ScoreMatrix::set(std::size_t item, std::size_t learner, int value) {
  if (item >= n_items_ || learner >= n_learners_)
    throw ShapeError("cell (" + std::to_string(item) + ", " +
                     std::to_string(learner) + ") outside the matrix");
  if (value < 1 || value > n_categories_)
    throw CategoryRangeError("score " + std::to_string(value) + " for item " +
                             std::to_string(item + 1) + ", learner " +
                             std::to_string(learner + 1) + " outside [1, " +
                             std::to_string(n_categories_) + "]");
  cells_[index(item, learner)] = value;
}

std::size_t ScoreMatrix::observed_count() const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(),
                    [](int v) { return v != kMissing; }));
}

std::size_t ScoreMatrix::observed_in_item(std::size_t item) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < n_learners_; ++j) n += observed(item, j);
  return n;
}

std::size_t ScoreMatrix::observed_for_learner(std::size_t learner) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < n_items_; ++i) n += observed(i, learner);
  return n;
}

void ScoreMatrix::set_item_ids(std::vector<std::string> ids) {
  if (ids.size() != n_items_) throw ShapeError("item id count mismatch");
  item_ids_ = std::move(ids);
}

void ScoreMatrix::set_learner_ids(std::vector<std::string> ids) {
  if (ids.size() != n_learners_) throw ShapeError("learner id count mismatch");
  learner_ids_ = std::move(ids);
}

ScoreMatrix ScoreMatrix::select_learners(
    std::span<const std::size_t> order) const {
  ScoreMatrix out(n_items_, order.size(), n_categories_);
  out.item_ids_ = item_ids_;
  for (std::size_t c = 0; c < order.size(); ++c) {
    if (order[c] >= n_learners_) throw ShapeError("learner index out of range");
    out.learner_ids_[c] = learner_ids_[order[c]];
    for (std::size_t i = 0; i < n_items_; ++i)
      out.cells_[out.index(i, c)] = at(i, order[c]);
  }
  return out;
}

void validate_item(const GpcmItemParams& item) {
  if (item.steps.size() < 2)
    throw CategoryRangeError("item needs at least two categories");
  if (!(item.discrimination > 0.0) || !std::isfinite(item.discrimination))
    throw DataError("item discrimination must be positive and finite");
  if (!std::isfinite(item.difficulty))
    throw DataError("item difficulty must be finite");
  if (item.steps[0] != 0.0) throw DataError("first step difficulty must be 0");
  double sum = 0.0;
  for (std::size_t m = 1; m < item.steps.size(); ++m) {
    if (!std::isfinite(item.steps[m]))
      throw DataError("step difficulties must be finite");
    sum += item.steps[m];
  }
  if (std::abs(sum) > 1e-8)
    throw DataError("step difficulties 2..K must sum to zero");
}

GpcmItemParams neutral_item(int n_categories) {
  return GpcmItemParams{1.0, 0.0,
                        std::vector<double>(static_cast<std::size_t>(n_categories), 0.0)};
}

AnswerCorpus::AnswerCorpus(std::size_t items, std::size_t learners)
    : n_items(items),
      n_learners(learners),
      item_ids(numbered("item_", items)),
      learner_ids(numbered("", learners)),
      item_prompts(items),
      item_rubrics(items),
      reference_answers(items),
      texts(items * learners) {}

void check_matches(const AnswerCorpus& corpus, const ScoreMatrix& scores) {
  if (corpus.n_items != scores.n_items() ||
      corpus.n_learners != scores.n_learners())
    throw ShapeError("answer corpus is " + std::to_string(corpus.n_items) +
                     "x" + std::to_string(corpus.n_learners) +
                     " but score matrix is " + std::to_string(scores.n_items()) +
                     "x" + std::to_string(scores.n_learners()));
}

void gpcm_log_probs(double theta, const GpcmItemParams& item,
                    std::span<double> out) {
  const std::size_t K = item.steps.size();
  // Cumulative exponents z_k = sum_{m<=k} alpha (theta - beta - d_m).
  double z = 0.0;
  double top = -INFINITY;
  for (std::size_t k = 0; k < K; ++k) {
    z += item.discrimination * (theta - item.difficulty - item.steps[k]);
    out[k] = z;
    top = std::max(top, z);
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) acc += std::exp(out[k] - top);
  const double lse = top + std::log(acc);
  for (std::size_t k = 0; k < K; ++k) out[k] -= lse;
}

double gpcm_prob(double theta, const GpcmItemParams& item, int k) {
  if (k < 1 || k > item.n_categories())
    throw CategoryRangeError("category " + std::to_string(k) + " outside [1, " +
                             std::to_string(item.n_categories()) + "]");
  std::vector<double> lp(item.steps.size());
  gpcm_log_probs(theta, item, lp);
  return std::exp(lp[static_cast<std::size_t>(k - 1)]);
}

std::vector<double> gpcm_prob_vector(double theta, const GpcmItemParams& item) {
  std::vector<double> p(item.steps.size());
  gpcm_log_probs(theta, item, p);
  for (double& v : p) v = std::exp(v);
  return p;
}

double gpcm_expected_score(double theta, const GpcmItemParams& item) {
  const auto p = gpcm_prob_vector(theta, item);
  double e = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) e += static_cast<double>(k + 1) * p[k];
  return e;
}

bool observation_graph_connected(std::size_t n_items, std::size_t n_learners,
                                 const std::vector<bool>& observed) {
  // Nodes 0..I-1 are items, I..I+J-1 learners.
  std::vector<std::size_t> parent(n_items + n_learners);
  for (std::size_t v = 0; v < parent.size(); ++v) parent[v] = v;
  auto find = [&](std::size_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  std::size_t components = parent.size();
  for (std::size_t i = 0; i < n_items; ++i) {
    for (std::size_t j = 0; j < n_learners; ++j) {
      if (!observed[i * n_learners + j]) continue;
      const auto a = find(i);
      const auto b = find(n_items + j);
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
  }
  return components == 1;
}

bool observation_graph_connected(const ScoreMatrix& scores) {
  std::vector<bool> mask(scores.n_items() * scores.n_learners());
  for (std::size_t i = 0; i < scores.n_items(); ++i)
    for (std::size_t j = 0; j < scores.n_learners(); ++j)
      mask[i * scores.n_learners() + j] = scores.observed(i, j);
  return observation_graph_connected(scores.n_items(), scores.n_learners(), mask);
}

double masked_log_likelihood(const ScoreMatrix& scores,
                             std::span<const GpcmItemParams> items,
                             const AbilitySet& abilities) {
  if (items.size() != scores.n_items())
    throw ShapeError("expected " + std::to_string(scores.n_items()) +
                     " item parameter sets, got " + std::to_string(items.size()));
  if (abilities.size() != scores.n_learners())
    throw ShapeError("expected " + std::to_string(scores.n_learners()) +
                     " abilities, got " + std::to_string(abilities.size()));
  for (const auto& item : items) {
    if (item.n_categories() != scores.n_categories())
      throw ShapeError("item category count does not match score matrix");
  }
  std::vector<double> lp(static_cast<std::size_t>(scores.n_categories()));
  double total = 0.0;
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    for (std::size_t j = 0; j < scores.n_learners(); ++j) {
      const int u = scores.at(i, j);
      if (u == kMissing) continue;
      gpcm_log_probs(abilities.values[j], items[i], lp);
      total += lp[static_cast<std::size_t>(u - 1)];
    }
  }
  return total;
}

}  // namespace irtimpute
