#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "irtimpute/designs.hpp"
#include "irtimpute/errors.hpp"

using namespace irtimpute;

namespace {

ScoreMatrix filled(std::size_t I, std::size_t J, int K = 5) {
  ScoreMatrix m(I, J, K);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t j = 0; j < J; ++j) m.set(i, j, 1 + static_cast<int>((i * 7 + j * 3) % K));
  return m;
}

std::size_t missing_for_learner(const MissingDesign& d, std::size_t j) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.n_items; ++i) n += !d.observed(i, j);
  return n;
}

std::size_t missing_for_item(const MissingDesign& d, std::size_t i) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < d.n_learners; ++j) n += !d.observed(i, j);
  return n;
}

}  // namespace

TEST_CASE("systematic designs have the closed-form cell counts") {
  const auto d33 = systematic_design(DesignGenerator::Systematic33, 3, 6);
  CHECK(d33.observed_count() == 12);
  CHECK(d33.missing_ratio() == doctest::Approx(1.0 / 3.0));
  for (std::size_t j = 0; j < 6; ++j) CHECK(missing_for_learner(d33, j) == 1);

  const auto d50 = systematic_design(DesignGenerator::Systematic50, 3, 6);
  CHECK(d50.observed_count() == 9);
  CHECK(d50.missing_ratio() == doctest::Approx(0.5));

  const auto d62 = systematic_design(DesignGenerator::Systematic62, 3, 21);
  CHECK(d62.observed_count() == 24);
  CHECK(d62.missing_count() == 39);
}

TEST_CASE("systematic blocks tile over longer learner lists and stay connected") {
  for (auto tag : {DesignGenerator::Systematic33, DesignGenerator::Systematic50,
                   DesignGenerator::Systematic62}) {
    const std::size_t period = tag == DesignGenerator::Systematic62 ? 21 : 6;
    const auto once = systematic_design(tag, 3, period);
    const auto many = systematic_design(tag, 3, period * 10);
    CHECK(many.observed_count() == 10 * once.observed_count());
    for (std::size_t j = 0; j < many.n_learners; ++j)
      for (std::size_t i = 0; i < 3; ++i)
        CHECK(many.observed(i, j) == once.observed(i, j % period));
    CHECK(many.connected());
    CHECK(many.every_learner_observed());
  }
}

TEST_CASE("62 percent block is one 1-3 repetition then six 4-6 repetitions") {
  const auto d33 = systematic_design(DesignGenerator::Systematic33, 3, 6);
  const auto d50 = systematic_design(DesignGenerator::Systematic50, 3, 6);
  const auto d62 = systematic_design(DesignGenerator::Systematic62, 3, 21);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i) CHECK(d62.observed(i, j) == d33.observed(i, j));
  for (std::size_t j = 3; j < 21; ++j)
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(d62.observed(i, j) == d50.observed(i, 3 + (j - 3) % 3));
}

TEST_CASE("systematic design preconditions") {
  CHECK_THROWS_AS(systematic_design(DesignGenerator::Systematic33, 4, 6), UnsupportedDesignError);
  CHECK_THROWS_AS(systematic_design(DesignGenerator::Systematic62, 3, 20), ShapeError);
}

TEST_CASE("wraparound drops exactly N_m items per learner") {
  CHECK(wraparound_design(100, 33, 10).missing_ratio() == doctest::Approx(0.10));
  CHECK(wraparound_design(100, 33, 0).missing_count() == 0);
  const auto all = wraparound_design(100, 33, 100);
  CHECK(all.observed_count() == 0);
  CHECK_FALSE(all.every_learner_observed());
  CHECK_THROWS_AS(wraparound_design(100, 33, 101), RangeError);

  for (std::size_t nm : {10u, 20u, 50u, 65u, 80u}) {
    CAPTURE(nm);
    const auto d = wraparound_design(100, 60, nm);
    CHECK(d.missing_count() == nm * 60);
    for (std::size_t j = 0; j < 60; ++j) CHECK(missing_for_learner(d, j) == nm);
    CHECK(d.connected());
    CHECK(d.every_learner_observed());
  }
}

TEST_CASE("wraparound interval starts at j times stride and wraps") {
  const auto d = wraparound_design(100, 12, 30);
  // Learner 9 starts at item 90 and misses 90..99 then 0..19.
  for (std::size_t i = 0; i < 100; ++i) {
    const bool missing = i >= 90 || i < 20;
    CHECK(d.observed(i, 9) == !missing);
  }
  // Learner 10 starts again at item 0.
  for (std::size_t i = 0; i < 100; ++i) CHECK(d.observed(i, 10) == (i >= 30));

  const auto s = wraparound_design(10, 4, 2, 3);
  CHECK_FALSE(s.observed(3, 1));
  CHECK_FALSE(s.observed(4, 1));
  CHECK(s.observed(5, 1));
}

TEST_CASE("random per-item design is exact and seeded") {
  const auto d = random_per_item_design(3, 500, 0.9, 11);
  for (std::size_t i = 0; i < 3; ++i) CHECK(missing_for_item(d, i) == 450);
  CHECK(random_per_item_design(3, 500, 0.9, 11).mask == d.mask);
  CHECK(random_per_item_design(3, 500, 0.9, 12).mask != d.mask);
  CHECK(random_per_item_design(4, 50, 0.0, 3).missing_count() == 0);
  CHECK(random_per_item_design(4, 50, 1.0, 3).observed_count() == 0);
  CHECK_THROWS_AS(random_per_item_design(3, 10, 1.5, 0), RangeError);
}

TEST_CASE("apply_design masks only and leaves the input alone") {
  const auto full = filled(3, 9);
  const auto copy = full;
  const auto d = systematic_design(DesignGenerator::Systematic33, 3, 9);
  const auto masked = apply_design(full, d);
  CHECK(full == copy);
  CHECK(masked.missing_count() == 9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      CHECK(masked.at(i, j) == (d.observed(i, j) ? full.at(i, j) : kMissing));

  CHECK(apply_design(full, wraparound_design(3, 9, 0)) == full);
  CHECK_THROWS_AS(apply_design(full, wraparound_design(3, 8, 1)), ShapeError);
}

TEST_CASE("shuffle_learners permutes columns reproducibly") {
  const auto m = filled(4, 25);
  const auto [shuffled, perm] = shuffle_learners(m, 99);
  CHECK(std::set<std::size_t>(perm.begin(), perm.end()).size() == 25);
  for (std::size_t c = 0; c < 25; ++c) {
    CHECK(shuffled.learner_ids()[c] == m.learner_ids()[perm[c]]);
    for (std::size_t i = 0; i < 4; ++i) CHECK(shuffled.at(i, c) == m.at(i, perm[c]));
  }
  std::vector<std::size_t> inverse(25);
  for (std::size_t c = 0; c < 25; ++c) inverse[perm[c]] = c;
  CHECK(shuffled.select_learners(inverse) == m);
  CHECK(shuffle_learners(m, 99).second == perm);

  const auto one = filled(2, 1);
  CHECK(shuffle_learners(one, 5).second == std::vector<std::size_t>{0});
}
