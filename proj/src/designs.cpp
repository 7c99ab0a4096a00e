#include "irtimpute/designs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "irtimpute/errors.hpp"

namespace irtimpute {

namespace {

// Columns of the example tables, one string per learner: item 1..3 flags.
constexpr std::array<const char*, 3> kPattern33 = {"110", "011", "101"};
constexpr std::array<const char*, 6> kPattern50 = {"110", "011", "101",
                                                   "100", "010", "001"};

std::vector<const char*> block_for(DesignGenerator tag) {
  switch (tag) {
    case DesignGenerator::Systematic33:
      return {kPattern33.begin(), kPattern33.end()};
    case DesignGenerator::Systematic50:
      return {kPattern50.begin(), kPattern50.end()};
    case DesignGenerator::Systematic62: {
      std::vector<const char*> block(kPattern50.begin(), kPattern50.begin() + 3);
      for (int rep = 0; rep < 6; ++rep)
        block.insert(block.end(), kPattern50.begin() + 3, kPattern50.end());
      return block;
    }
    default:
      throw UnsupportedDesignError("not a systematic design: " + to_string(tag));
  }
}

double nominal_ratio(DesignGenerator tag) {
  switch (tag) {
    case DesignGenerator::Systematic33:
      return 1.0 / 3.0;
    case DesignGenerator::Systematic50:
      return 0.5;
    case DesignGenerator::Systematic62:
      return 39.0 / 63.0;
    default:
      return 0.0;
  }
}

}  // namespace

std::string to_string(DesignGenerator g) {
  switch (g) {
    case DesignGenerator::Systematic33:
      return "systematic33";
    case DesignGenerator::Systematic50:
      return "systematic50";
    case DesignGenerator::Systematic62:
      return "systematic62";
    case DesignGenerator::Wraparound:
      return "wraparound";
    case DesignGenerator::RandomPerItem:
      return "random";
  }
  return "unknown";
}

DesignGenerator design_generator_from_string(const std::string& name) {
  for (auto g : {DesignGenerator::Systematic33, DesignGenerator::Systematic50,
                 DesignGenerator::Systematic62, DesignGenerator::Wraparound,
                 DesignGenerator::RandomPerItem}) {
    if (to_string(g) == name) return g;
  }
  throw UsageError("unknown design generator '" + name + "'");
}

std::size_t MissingDesign::observed_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

bool MissingDesign::connected() const {
  return observation_graph_connected(n_items, n_learners, mask);
}

bool MissingDesign::every_learner_observed() const {
  for (std::size_t j = 0; j < n_learners; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < n_items && !any; ++i) any = observed(i, j);
    if (!any) return false;
  }
  return true;
}

MissingDesign systematic_design(DesignGenerator tag, std::size_t n_items,
                                std::size_t n_learners) {
  const auto block = block_for(tag);
  if (n_items != 3)
    throw UnsupportedDesignError("systematic designs are defined for 3 items, got " +
                                 std::to_string(n_items));
  if (n_learners < block.size())
    throw ShapeError(to_string(tag) + " needs at least " +
                     std::to_string(block.size()) + " learners");
  MissingDesign d;
  d.n_items = n_items;
  d.n_learners = n_learners;
  d.generator = tag;
  d.target_ratio = nominal_ratio(tag);
  d.mask.assign(n_items * n_learners, false);
  for (std::size_t j = 0; j < n_learners; ++j) {
    const char* column = block[j % block.size()];
    for (std::size_t i = 0; i < n_items; ++i) d.mask[i * n_learners + j] = column[i] == '1';
  }
  return d;
}

MissingDesign wraparound_design(std::size_t n_items, std::size_t n_learners,
                                std::size_t n_missing_per_learner,
                                std::size_t stride) {
  if (n_items < 1 || n_learners < 1) throw ShapeError("empty design");
  if (n_missing_per_learner > n_items)
    throw RangeError("cannot drop " + std::to_string(n_missing_per_learner) +
                     " of " + std::to_string(n_items) + " items per learner");
  MissingDesign d;
  d.n_items = n_items;
  d.n_learners = n_learners;
  d.generator = DesignGenerator::Wraparound;
  d.target_ratio =
      static_cast<double>(n_missing_per_learner) / static_cast<double>(n_items);
  d.mask.assign(n_items * n_learners, true);
  for (std::size_t j = 0; j < n_learners; ++j) {
    const std::size_t start = (j * stride) % n_items;
    for (std::size_t off = 0; off < n_missing_per_learner; ++off) {
      const std::size_t i = (start + off) % n_items;
      d.mask[i * n_learners + j] = false;
    }
  }
  return d;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates so the permutation does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t k = n; k > 1; --k) {
    const std::size_t r = static_cast<std::size_t>(rng() % k);
    std::swap(perm[k - 1], perm[r]);
  }
  return perm;
}

MissingDesign random_per_item_design(std::size_t n_items, std::size_t n_learners,
                                     double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw RangeError("missing ratio must lie in [0, 1]");
  if (n_items < 1 || n_learners < 1) throw ShapeError("empty design");
  MissingDesign d;
  d.n_items = n_items;
  d.n_learners = n_learners;
  d.generator = DesignGenerator::RandomPerItem;
  d.target_ratio = ratio;
  d.seed = seed;
  d.mask.assign(n_items * n_learners, true);
  const auto drop = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(n_learners) + 0.5));
  for (std::size_t i = 0; i < n_items; ++i) {
    const auto perm = seeded_permutation(n_learners, seed * 1000003u + i);
    for (std::size_t k = 0; k < drop; ++k) d.mask[i * n_learners + perm[k]] = false;
  }
  return d;
}

ScoreMatrix apply_design(const ScoreMatrix& scores, const MissingDesign& design) {
  if (scores.n_items() != design.n_items || scores.n_learners() != design.n_learners)
    throw ShapeError("design is " + std::to_string(design.n_items) + "x" +
                     std::to_string(design.n_learners) + " but scores are " +
                     std::to_string(scores.n_items()) + "x" +
                     std::to_string(scores.n_learners()));
  ScoreMatrix out = scores;
  for (std::size_t i = 0; i < design.n_items; ++i) {
    for (std::size_t j = 0; j < design.n_learners; ++j) {
      if (!design.observed(i, j)) {
        out.clear(i, j);
      } else if (!scores.observed(i, j)) {
        throw DataError("design observes item " + scores.item_ids()[i] +
                        ", learner " + scores.learner_ids()[j] +
                        " but the score is missing");
      }
    }
  }
  return out;
}

std::pair<ScoreMatrix, std::vector<std::size_t>> shuffle_learners(
    const ScoreMatrix& scores, std::uint64_t seed) {
  auto perm = seeded_permutation(scores.n_learners(), seed);
  return {scores.select_learners(perm), std::move(perm)};
}

}  // namespace irtimpute
