#include "irtimpute/estimation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "irtimpute/errors.hpp"

namespace irtimpute {

namespace {

struct Observation {
  std::size_t other;  // learner index for item lists, item index for learner lists
  int score;
};

struct Moments {
  double mean;
  double variance;
};

Moments population_moments(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, ss / n};
}

double clamp_soft(double value, double proposal, Bounds b) {
  // Stays in the box, except that a start outside it is only pulled inward.
  return std::clamp(proposal, std::min(b.lower, value), std::max(b.upper, value));
}

// Log-likelihood of one learner's observed scores plus its first two
// derivatives in theta.
struct ThetaEval {
  double value = 0.0;
  double gradient = 0.0;
  double information = 0.0;
};

ThetaEval eval_theta(double theta, std::span<const Observation> obs,
                     std::span<const GpcmItemParams> items,
                     std::vector<double>& lp) {
  ThetaEval e;
  for (const auto& o : obs) {
    const auto& item = items[o.other];
    gpcm_log_probs(theta, item, lp);
    double mean = 0.0;
    double second = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      const double p = std::exp(lp[k]);
      const double c = static_cast<double>(k + 1);
      mean += c * p;
      second += c * c * p;
    }
    const double a = item.discrimination;
    e.value += lp[static_cast<std::size_t>(o.score - 1)];
    e.gradient += a * (o.score - mean);
    e.information += a * a * std::max(0.0, second - mean * mean);
  }
  return e;
}

// Maximizes the (concave) learner log-likelihood over [lower, upper] by
// Newton steps safeguarded with a shrinking bracket.
double maximize_theta(std::span<const Observation> obs,
                      std::span<const GpcmItemParams> items, double start,
                      double lower, double upper, int max_iters,
                      std::vector<double>& lp) {
  if (eval_theta(lower, obs, items, lp).gradient <= 0.0) return lower;
  if (eval_theta(upper, obs, items, lp).gradient >= 0.0) return upper;
  double a = lower;
  double b = upper;
  double x = std::clamp(start, a, b);
  for (int it = 0; it < max_iters; ++it) {
    const auto e = eval_theta(x, obs, items, lp);
    if (e.gradient == 0.0) break;
    if (e.gradient > 0.0)
      a = x;
    else
      b = x;
    double next = e.information > 0.0 ? x + e.gradient / e.information : a;
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) < 1e-12) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

// Free parameterization of one item's steps: categories (0-based m >= 1)
// seen in the data vary, the largest of them absorbs the sum-zero
// constraint, the rest are held.
struct StepLayout {
  std::vector<std::size_t> free;
  std::size_t pivot = 0;
  bool has_pivot = false;
  std::vector<std::size_t> held;
};

StepLayout make_layout(std::span<const Observation> obs, int n_categories) {
  std::vector<bool> seen(static_cast<std::size_t>(n_categories), false);
  for (const auto& o : obs) seen[static_cast<std::size_t>(o.score - 1)] = true;
  StepLayout layout;
  std::vector<std::size_t> varying;
  for (std::size_t m = 1; m < seen.size(); ++m) {
    if (seen[m])
      varying.push_back(m);
    else
      layout.held.push_back(m);
  }
  if (!varying.empty()) {
    layout.has_pivot = true;
    layout.pivot = varying.back();
    varying.pop_back();
    layout.free = std::move(varying);
  }
  return layout;
}

// One pseudo-observation for the item M-step: an ability value, a category
// and a (possibly fractional) count.
struct WeightedObs {
  double theta;
  int score;
  double weight;
};

double item_log_likelihood(const GpcmItemParams& item, std::span<const WeightedObs> obs,
                           std::vector<double>& lp) {
  double total = 0.0;
  for (const auto& o : obs) {
    gpcm_log_probs(o.theta, item, lp);
    total += o.weight * lp[static_cast<std::size_t>(o.score - 1)];
  }
  return total;
}

void place_pivot(GpcmItemParams& item, const StepLayout& layout) {
  if (!layout.has_pivot) return;
  double sum = 0.0;
  for (std::size_t m = 1; m < item.steps.size(); ++m) {
    if (m != layout.pivot) sum += item.steps[m];
  }
  item.steps[layout.pivot] = -sum;
}

// Fisher scoring on (alpha, beta, free steps) with backtracking. Returns the
// item's new objective, never lower than the old one.
double update_item(GpcmItemParams& item, const StepLayout& layout,
                   std::span<const WeightedObs> obs, const FitConfig& config,
                   std::vector<double>& lp) {
  const std::size_t K = item.steps.size();
  const std::size_t dim = 2 + layout.free.size();
  double current = item_log_likelihood(item, obs, lp);
  Eigen::VectorXd score(dim);
  Eigen::MatrixXd info(dim, dim);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(K), dim);
  Eigen::VectorXd p(static_cast<Eigen::Index>(K));

  for (int it = 0; it < config.inner_newton_iters; ++it) {
    score.setZero();
    info.setZero();
    for (const auto& o : obs) {
      const double th = o.theta;
      gpcm_log_probs(th, item, lp);
      double cum = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        p(row) = std::exp(lp[k]);
        cum += th - item.difficulty - item.steps[k];
        c(row, 0) = cum;
        c(row, 1) = -item.discrimination * static_cast<double>(k + 1);
        const double pivot_ind = (layout.has_pivot && layout.pivot <= k) ? 1.0 : 0.0;
        for (std::size_t r = 0; r < layout.free.size(); ++r) {
          const double ind = layout.free[r] <= k ? 1.0 : 0.0;
          c(row, static_cast<Eigen::Index>(2 + r)) =
              -item.discrimination * (ind - pivot_ind);
        }
      }
      const Eigen::VectorXd mean = c.transpose() * p;
      score += o.weight * (c.row(o.score - 1).transpose() - mean);
      info += o.weight * (c.transpose() * p.asDiagonal() * c - mean * mean.transpose());
    }
    const double scale = std::max(1.0, info.diagonal().cwiseAbs().maxCoeff());
    info.diagonal().array() += 1e-10 * scale;
    Eigen::VectorXd delta = info.ldlt().solve(score);
    if (!delta.allFinite()) delta = score / scale;

    bool improved = false;
    double t = 1.0;
    for (int halving = 0; halving < 30; ++halving, t *= 0.5) {
      GpcmItemParams trial = item;
      trial.discrimination = clamp_soft(item.discrimination,
                                        item.discrimination + t * delta(0),
                                        config.discrimination_bounds);
      trial.difficulty = clamp_soft(item.difficulty, item.difficulty + t * delta(1),
                                    config.location_bounds);
      for (std::size_t r = 0; r < layout.free.size(); ++r) {
        const std::size_t m = layout.free[r];
        trial.steps[m] = clamp_soft(
            item.steps[m], item.steps[m] + t * delta(static_cast<Eigen::Index>(2 + r)),
            config.location_bounds);
      }
      place_pivot(trial, layout);
      if (layout.has_pivot) {
        const double piv = trial.steps[layout.pivot];
        const double old = item.steps[layout.pivot];
        if (piv < std::min(config.location_bounds.lower, old) ||
            piv > std::max(config.location_bounds.upper, old))
          continue;
      }
      const double value = item_log_likelihood(trial, obs, lp);
      if (value >= current) {
        const bool moved = value > current;
        item = std::move(trial);
        current = value;
        improved = moved;
        break;
      }
    }
    if (!improved || t * delta.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return current;
}

// Equally spaced nodes with standard normal weights.
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> log_weights;
};

Quadrature make_quadrature(std::size_t n, double half_width) {
  Quadrature q;
  double total = 0.0;
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = -half_width + 2.0 * half_width * static_cast<double>(k) /
                                       static_cast<double>(n - 1);
    q.nodes.push_back(x);
    w[k] = std::exp(-0.5 * x * x);
    total += w[k];
  }
  for (double v : w) q.log_weights.push_back(std::log(v / total));
  return q;
}

bool extreme_pattern(std::span<const Observation> obs, int n_categories) {
  return std::all_of(obs.begin(), obs.end(), [&](const Observation& o) {
           return o.score == n_categories;
         }) ||
         std::all_of(obs.begin(), obs.end(),
                     [](const Observation& o) { return o.score == 1; });
}

}  // namespace

void validate(const FitConfig& config) {
  if (!(config.convergence_tol > 0.0))
    throw UsageError("convergence tolerance must be positive");
  if (config.max_outer_iters < 1 || config.inner_newton_iters < 1)
    throw UsageError("iteration limits must be at least 1");
  if (!(config.discrimination_bounds.lower > 0.0) ||
      !(config.discrimination_bounds.lower < config.discrimination_bounds.upper))
    throw UsageError("discrimination bounds must be positive and ordered");
  if (!(config.location_bounds.lower < config.location_bounds.upper))
    throw UsageError("location bounds must be ordered");
}

void check_estimable(const ScoreMatrix& scores) {
  for (std::size_t j = 0; j < scores.n_learners(); ++j) {
    if (scores.observed_for_learner(j) == 0)
      throw NotEstimableError("learner " + scores.learner_ids()[j] +
                              " has no observed scores");
  }
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    if (scores.observed_in_item(i) == 0)
      throw NotEstimableError("item " + scores.item_ids()[i] +
                              " has no observed scores");
  }
  if (!observation_graph_connected(scores))
    throw LinkingError(
        "observation graph is disconnected; items and learners cannot be "
        "placed on one scale");
}

void rescale_solution(std::vector<GpcmItemParams>& items, AbilitySet& abilities,
                      double scale, double shift) {
  for (double& t : abilities.values) t = scale * t + shift;
  for (auto& item : items) {
    item.discrimination /= scale;
    item.difficulty = scale * item.difficulty + shift;
    for (double& d : item.steps) d *= scale;
  }
}

AbilitySet normalize_abilities(const AbilitySet& abilities) {
  if (abilities.size() < 2)
    throw DegenerateError("normalization needs at least two abilities");
  const auto m = population_moments(abilities.values);
  if (!(m.variance > 0.0))
    throw DegenerateError("abilities have zero variance");
  AbilitySet out;
  out.normalized = true;
  out.mean = m.mean;
  out.variance = m.variance;
  const double sd = std::sqrt(m.variance);
  out.values.reserve(abilities.size());
  for (double v : abilities.values) out.values.push_back((v - m.mean) / sd);
  return out;
}

AbilitySet estimate_abilities(const ScoreMatrix& scores,
                              std::span<const GpcmItemParams> items,
                              const FitConfig& config) {
  if (items.size() != scores.n_items())
    throw ShapeError("item parameter count does not match score matrix");
  for (const auto& item : items) {
    validate_item(item);
    if (item.n_categories() != scores.n_categories())
      throw ShapeError("item category count does not match score matrix");
  }
  AbilitySet out;
  out.values.resize(scores.n_learners());
  std::vector<double> lp(static_cast<std::size_t>(scores.n_categories()));
  std::vector<Observation> obs;
  for (std::size_t j = 0; j < scores.n_learners(); ++j) {
    obs.clear();
    for (std::size_t i = 0; i < scores.n_items(); ++i) {
      if (scores.observed(i, j)) obs.push_back({i, scores.at(i, j)});
    }
    if (obs.empty())
      throw NotEstimableError("learner " + scores.learner_ids()[j] +
                              " has no observed scores");
    out.values[j] = maximize_theta(obs, items, 0.0, config.location_bounds.lower,
                                   config.location_bounds.upper, 200, lp);
  }
  out.mean = population_moments(out.values).mean;
  out.variance = population_moments(out.values).variance;
  return out;
}

FitResult fit_gpcm(const ScoreMatrix& scores, const FitConfig& config) {
  validate(config);
  check_estimable(scores);
  const std::size_t I = scores.n_items();
  const std::size_t J = scores.n_learners();
  const int K = scores.n_categories();
  const auto Kz = static_cast<std::size_t>(K);
  const Bounds loc = config.location_bounds;

  std::vector<std::vector<Observation>> by_learner(J), by_item(I);
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      if (!scores.observed(i, j)) continue;
      by_learner[j].push_back({i, scores.at(i, j)});
      by_item[i].push_back({j, scores.at(i, j)});
    }
  }

  FitResult result;
  std::vector<double> item_mean(I);
  for (std::size_t i = 0; i < I; ++i) {
    double s = 0.0;
    for (const auto& o : by_item[i]) s += o.score;
    item_mean[i] = s / static_cast<double>(by_item[i].size());
  }
  const auto im = population_moments(item_mean);
  std::vector<StepLayout> layouts(I);
  result.items.assign(I, neutral_item(K));
  for (std::size_t i = 0; i < I; ++i) {
    const double z =
        im.variance > 0.0 ? (item_mean[i] - im.mean) / std::sqrt(im.variance) : 0.0;
    result.items[i].difficulty = std::clamp(-z, loc.lower, loc.upper);
    layouts[i] = make_layout(by_item[i], K);
    for (std::size_t m : layouts[i].held) {
      result.flags.push_back("item " + scores.item_ids()[i] + ": category " +
                             std::to_string(m + 1) +
                             " unobserved, step difficulty held at 0");
    }
  }

  // Item calibration by marginal maximum likelihood (EM over a fixed grid
  // with a standard normal ability distribution). The joint likelihood has
  // no finite maximum once any item can separate learners perfectly, so
  // items are not calibrated against per-learner abilities.
  const Quadrature quad = make_quadrature(61, 6.0);
  const std::size_t Q = quad.nodes.size();
  std::vector<double> lp(Kz);
  std::vector<double> table(I * Q * Kz);  // log P(k | node q) per item
  std::vector<double> counts(I * Q * Kz);
  std::vector<double> post(Q);

  auto e_step = [&]() {
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t q = 0; q < Q; ++q) {
        gpcm_log_probs(quad.nodes[q], result.items[i], lp);
        std::copy(lp.begin(), lp.end(), table.begin() + static_cast<std::ptrdiff_t>((i * Q + q) * Kz));
      }
    std::fill(counts.begin(), counts.end(), 0.0);
    double marginal = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < Q; ++q) {
        double v = quad.log_weights[q];
        for (const auto& o : by_learner[j])
          v += table[(o.other * Q + q) * Kz + static_cast<std::size_t>(o.score - 1)];
        post[q] = v;
        top = std::max(top, v);
      }
      double total = 0.0;
      for (std::size_t q = 0; q < Q; ++q) {
        post[q] = std::exp(post[q] - top);
        total += post[q];
      }
      marginal += top + std::log(total);
      for (std::size_t q = 0; q < Q; ++q) {
        const double w = post[q] / total;
        if (w < 1e-300) continue;
        for (const auto& o : by_learner[j])
          counts[(o.other * Q + q) * Kz + static_cast<std::size_t>(o.score - 1)] += w;
      }
    }
    return marginal;
  };

  double ll = e_step();
  result.log_likelihood_trace.push_back(ll);
  std::vector<WeightedObs> pseudo;
  for (int outer = 1; outer <= config.max_outer_iters; ++outer) {
    for (std::size_t i = 0; i < I; ++i) {
      pseudo.clear();
      for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t k = 0; k < Kz; ++k) {
          const double w = counts[(i * Q + q) * Kz + k];
          if (w > 1e-12) pseudo.push_back({quad.nodes[q], static_cast<int>(k + 1), w});
        }
      update_item(result.items[i], layouts[i], pseudo, config, lp);
    }
    const double next = e_step();
    result.log_likelihood_trace.push_back(next);
    result.iterations = outer;
    const double change = std::abs(next - ll);
    ll = next;
    if (change <= config.convergence_tol * std::max(1.0, std::abs(ll))) {
      result.converged = true;
      break;
    }
  }

  // No finite MLE exists for an all-1 or all-K pattern; such learners get
  // the posterior mean under the calibration's ability distribution.
  const bool clamp_extremes = config.extreme_patterns == ExtremePatternRule::ClampToBound;
  std::vector<double> log_post(Q);
  auto posterior_mean = [&](std::span<const Observation> obs) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < Q; ++q) {
      double v = quad.log_weights[q];
      for (const auto& o : obs)
        v += table[(o.other * Q + q) * Kz + static_cast<std::size_t>(o.score - 1)];
      log_post[q] = v;
      top = std::max(top, v);
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t q = 0; q < Q; ++q) {
      const double w = std::exp(log_post[q] - top);
      num += w * quad.nodes[q];
      den += w;
    }
    return std::clamp(num / den, loc.lower, loc.upper);
  };
  auto fit_ability = [&](std::span<const Observation> obs) {
    if (clamp_extremes || !extreme_pattern(obs, K))
      return maximize_theta(obs, result.items, 0.0, loc.lower, loc.upper, 200, lp);
    return posterior_mean(obs);
  };
  AbilitySet& abilities = result.abilities;
  abilities.values.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    if (extreme_pattern(by_learner[j], K))
      result.flags.push_back("learner " + scores.learner_ids()[j] +
                             (clamp_extremes
                                  ? ": extreme response pattern, ability at bound"
                                  : ": extreme response pattern, posterior-mean ability"));
    abilities.values[j] = fit_ability(by_learner[j]);
  }

  // Exact final standardization; items absorb the affine map.
  const auto m = population_moments(abilities.values);
  if (!(m.variance > 0.0)) throw DegenerateError("fitted abilities have zero variance");
  const double sd = std::sqrt(m.variance);
  rescale_solution(result.items, abilities, 1.0 / sd, -m.mean / sd);
  abilities.normalized = true;
  abilities.mean = m.mean;
  abilities.variance = m.variance;
  for (auto& item : result.items) item.steps[0] = 0.0;
  result.final_log_likelihood = masked_log_likelihood(scores, result.items, abilities);
  return result;
}

LikelihoodGradient masked_log_likelihood_gradient(
    const ScoreMatrix& scores, std::span<const GpcmItemParams> items,
    const AbilitySet& abilities) {
  if (items.size() != scores.n_items() || abilities.size() != scores.n_learners())
    throw ShapeError("parameter dimensions do not match score matrix");
  const std::size_t K = static_cast<std::size_t>(scores.n_categories());
  LikelihoodGradient g;
  g.theta.assign(scores.n_learners(), 0.0);
  g.discrimination.assign(scores.n_items(), 0.0);
  g.difficulty.assign(scores.n_items(), 0.0);
  g.steps.assign(scores.n_items(), std::vector<double>(K, 0.0));
  std::vector<double> lp(K), cum(K), tail(K);
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    const auto& item = items[i];
    const double a = item.discrimination;
    for (std::size_t j = 0; j < scores.n_learners(); ++j) {
      const int u = scores.at(i, j);
      if (u == kMissing) continue;
      const double theta = abilities.values[j];
      gpcm_log_probs(theta, item, lp);
      double mean = 0.0;
      double mean_cum = 0.0;
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double p = std::exp(lp[k]);
        s += theta - item.difficulty - item.steps[k];
        cum[k] = s;
        mean += static_cast<double>(k + 1) * p;
        mean_cum += p * s;
      }
      // tail[m] = P(category index >= m)
      double acc = 0.0;
      for (std::size_t k = K; k-- > 0;) {
        acc += std::exp(lp[k]);
        tail[k] = acc;
      }
      const auto ui = static_cast<std::size_t>(u - 1);
      g.theta[j] += a * (u - mean);
      g.difficulty[i] -= a * (u - mean);
      g.discrimination[i] += cum[ui] - mean_cum;
      for (std::size_t m = 0; m < K; ++m) {
        const double ind = m <= ui ? 1.0 : 0.0;
        g.steps[i][m] -= a * (ind - tail[m]);
      }
    }
  }
  return g;
}

}  // namespace irtimpute
