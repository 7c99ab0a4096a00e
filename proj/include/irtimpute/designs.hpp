#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "irtimpute/core_model.hpp"

namespace irtimpute {

enum class DesignGenerator {
  Systematic33,
  Systematic50,
  Systematic62,
  Wraparound,
  RandomPerItem,
};

std::string to_string(DesignGenerator g);
DesignGenerator design_generator_from_string(const std::string& name);

// Planned observation pattern. mask is item-major I x J, true = observed.
struct MissingDesign {
  std::size_t n_items = 0;
  std::size_t n_learners = 0;
  std::vector<bool> mask;
  DesignGenerator generator = DesignGenerator::RandomPerItem;
  double target_ratio = 0.0;
  std::uint64_t seed = 0;

  bool observed(std::size_t item, std::size_t learner) const {
    return mask[item * n_learners + learner];
  }
  std::size_t observed_count() const;
  std::size_t missing_count() const { return mask.size() - observed_count(); }
  double missing_ratio() const {
    return static_cast<double>(missing_count()) / static_cast<double>(mask.size());
  }
  bool connected() const;
  // True when every learner keeps at least one observed cell.
  bool every_learner_observed() const;
};

// Tiles the three-item patterns of learners 1-3 (33%), 1-6 (50%), or one
// 1-3 block followed by six 4-6 blocks (62%) across the learners.
MissingDesign systematic_design(DesignGenerator tag, std::size_t n_items,
                                std::size_t n_learners);

// Learner j (0-based) misses items [j*stride mod I, j*stride + N_m mod I),
// wrapping around the item list.
MissingDesign wraparound_design(std::size_t n_items, std::size_t n_learners,
                                std::size_t n_missing_per_learner,
                                std::size_t stride = 10);

// Each item independently loses exactly round(ratio * J) learners.
MissingDesign random_per_item_design(std::size_t n_items, std::size_t n_learners,
                                     double ratio, std::uint64_t seed);

ScoreMatrix apply_design(const ScoreMatrix& scores, const MissingDesign& design);

// Returns the shuffled matrix and the permutation: learner c of the result
// is learner permutation[c] of the input.
std::pair<ScoreMatrix, std::vector<std::size_t>> shuffle_learners(
    const ScoreMatrix& scores, std::uint64_t seed);

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace irtimpute
