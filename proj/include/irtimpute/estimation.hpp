#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "irtimpute/core_model.hpp"

namespace irtimpute {

struct Bounds {
  double lower;
  double upper;
};

// How fit_gpcm places learners whose observed scores are all 1 or all K,
// for whom no finite maximum likelihood ability exists.
enum class ExtremePatternRule {
  // Posterior mean under the standard normal ability distribution used for
  // item calibration.
  PosteriorMean,
  // The ability bound, as estimate_abilities does.
  ClampToBound,
};

struct FitConfig {
  int max_outer_iters = 200;
  int inner_newton_iters = 10;
  // Stop once |delta loglik| <= convergence_tol * max(1, |loglik|).
  double convergence_tol = 1e-6;
  Bounds discrimination_bounds{0.05, 10.0};
  // Shared by theta, beta and the step difficulties.
  Bounds location_bounds{-6.0, 6.0};
  ExtremePatternRule extreme_patterns = ExtremePatternRule::PosteriorMean;
  std::uint64_t seed = 0;
};

void validate(const FitConfig& config);

struct FitResult {
  std::vector<GpcmItemParams> items;
  AbilitySet abilities;
  double final_log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  // Human-readable notes (held step parameters, clamped learners, ...).
  std::vector<std::string> flags;
  // Log-likelihood after initialization and after every outer iteration.
  std::vector<double> log_likelihood_trace;
};

// Item parameters by marginal maximum likelihood (EM on a 61-node grid over
// a standard normal ability distribution, Fisher scoring in the M-step),
// then per-learner maximum likelihood abilities against the calibrated items
// (see ExtremePatternRule for patterns without a finite maximum), then an exact
// standardization of the abilities that the items absorb.
// log_likelihood_trace holds the marginal log-likelihood per EM iteration;
// final_log_likelihood is the masked joint log-likelihood of the returned
// solution. Deterministic; `config.seed` is recorded only.
FitResult fit_gpcm(const ScoreMatrix& scores, const FitConfig& config = {});

// Per-learner maximum likelihood abilities with items held fixed. Not
// normalized.
AbilitySet estimate_abilities(const ScoreMatrix& scores,
                              std::span<const GpcmItemParams> items,
                              const FitConfig& config = {});

// Affine map to mean 0 and population variance 1.
AbilitySet normalize_abilities(const AbilitySet& abilities);

// Applies theta -> scale * theta + shift together with the compensating item
// transform, which leaves every GPCM probability unchanged.
void rescale_solution(std::vector<GpcmItemParams>& items, AbilitySet& abilities,
                      double scale, double shift);

// Gradient of masked_log_likelihood with respect to every parameter. Step
// derivatives are with respect to each raw d_im, ignoring the constraints.
struct LikelihoodGradient {
  std::vector<double> theta;
  std::vector<double> discrimination;
  std::vector<double> difficulty;
  std::vector<std::vector<double>> steps;
};

LikelihoodGradient masked_log_likelihood_gradient(
    const ScoreMatrix& scores, std::span<const GpcmItemParams> items,
    const AbilitySet& abilities);

// Throws NotEstimableError naming the first empty learner or item and
// LinkingError when the observation graph is disconnected.
void check_estimable(const ScoreMatrix& scores);

}  // namespace irtimpute
