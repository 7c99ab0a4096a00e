#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace irtimpute {

// Categories are 1-based; kMissing never takes part in arithmetic.
inline constexpr int kMissing = 0;

// I x J polytomous score matrix (items by learners) over categories 1..K.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  // All cells start out missing.
  ScoreMatrix(std::size_t n_items, std::size_t n_learners, int n_categories);

  // rows[i][j] is the score of learner j on item i; kMissing marks a gap.
  static ScoreMatrix from_items(int n_categories,
                                const std::vector<std::vector<int>>& rows);

  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_learners() const noexcept { return n_learners_; }
  int n_categories() const noexcept { return n_categories_; }

  int at(std::size_t item, std::size_t learner) const {
    return cells_[index(item, learner)];
  }
  bool observed(std::size_t item, std::size_t learner) const {
    return at(item, learner) != kMissing;
  }
  void set(std::size_t item, std::size_t learner, int value);
  void clear(std::size_t item, std::size_t learner) {
    cells_[index(item, learner)] = kMissing;
  }

  std::size_t observed_count() const;
  std::size_t missing_count() const { return cells_.size() - observed_count(); }
  bool is_complete() const { return missing_count() == 0; }
  std::size_t observed_in_item(std::size_t item) const;
  std::size_t observed_for_learner(std::size_t learner) const;

  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
  const std::vector<std::string>& learner_ids() const noexcept {
    return learner_ids_;
  }
  void set_item_ids(std::vector<std::string> ids);
  void set_learner_ids(std::vector<std::string> ids);

  // Learner `column` of the result is learner `order[column]` of this matrix.
  ScoreMatrix select_learners(std::span<const std::size_t> order) const;

  bool operator==(const ScoreMatrix&) const = default;

 private:
  std::size_t index(std::size_t item, std::size_t learner) const {
    return item * n_learners_ + learner;
  }

  std::size_t n_items_ = 0;
  std::size_t n_learners_ = 0;
  int n_categories_ = 0;
  std::vector<int> cells_;
  std::vector<std::string> item_ids_;
  std::vector<std::string> learner_ids_;
};

// GPCM item: discrimination alpha, difficulty beta and K step difficulties
// with steps[0] == 0 and steps[1..K-1] summing to zero.
struct GpcmItemParams {
  double discrimination = 1.0;
  double difficulty = 0.0;
  std::vector<double> steps;

  int n_categories() const noexcept { return static_cast<int>(steps.size()); }
  bool operator==(const GpcmItemParams&) const = default;
};

// Throws DataError if the item violates the identification constraints.
void validate_item(const GpcmItemParams& item);

// Symmetric item: alpha 1, beta 0, all steps 0.
GpcmItemParams neutral_item(int n_categories);

struct AbilitySet {
  std::vector<double> values;
  bool normalized = false;
  // Moments of the values the normalization was computed from.
  double mean = 0.0;
  double variance = 1.0;

  std::size_t size() const noexcept { return values.size(); }
};

// Learner answer texts and per-item grading context. Optional companion of a
// ScoreMatrix with the same dimensions.
struct AnswerCorpus {
  std::size_t n_items = 0;
  std::size_t n_learners = 0;
  std::vector<std::string> item_ids;
  std::vector<std::string> learner_ids;
  std::vector<std::string> item_prompts;
  std::vector<std::string> item_rubrics;
  std::vector<std::optional<std::string>> reference_answers;
  std::vector<std::optional<std::string>> texts;  // item-major I x J

  AnswerCorpus() = default;
  AnswerCorpus(std::size_t items, std::size_t learners);

  const std::optional<std::string>& text(std::size_t item,
                                         std::size_t learner) const {
    return texts[item * n_learners + learner];
  }
  std::optional<std::string>& text(std::size_t item, std::size_t learner) {
    return texts[item * n_learners + learner];
  }
};

void check_matches(const AnswerCorpus& corpus, const ScoreMatrix& scores);

// Writes log P(u = k), k = 1..K, into out (size K).
void gpcm_log_probs(double theta, const GpcmItemParams& item,
                    std::span<double> out);

double gpcm_prob(double theta, const GpcmItemParams& item, int k);
std::vector<double> gpcm_prob_vector(double theta, const GpcmItemParams& item);
double gpcm_expected_score(double theta, const GpcmItemParams& item);

// Union-find check that the bipartite learner-item graph, with an edge per
// observed cell, is a single component. `observed` is item-major I x J.
bool observation_graph_connected(std::size_t n_items, std::size_t n_learners,
                                 const std::vector<bool>& observed);
bool observation_graph_connected(const ScoreMatrix& scores);

// Sum over observed cells of log P(u_ij). Missing cells contribute nothing.
double masked_log_likelihood(const ScoreMatrix& scores,
                             std::span<const GpcmItemParams> items,
                             const AbilitySet& abilities);

}  // namespace irtimpute
