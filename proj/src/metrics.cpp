#include "irtimpute/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "irtimpute/errors.hpp"

namespace irtimpute {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t min_n) {
  if (a != b)
    throw ShapeError("series lengths differ: " + std::to_string(a) + " vs " +
                     std::to_string(b));
  if (a < min_n)
    throw ShapeError("need at least " + std::to_string(min_n) + " values, got " +
                     std::to_string(a));
}

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double rmse(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), 1);
  double ss = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), 2);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0))
    throw DegenerateError("correlation undefined for a constant series");
  const double r = sab / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

QwkResult qwk(std::span<const int> truth, std::span<const int> pred, int K) {
  check_lengths(truth.size(), pred.size(), 1);
  if (K < 2) throw CategoryRangeError("QWK needs at least two categories");
  const auto k = static_cast<std::size_t>(K);
  std::vector<double> observed(k * k, 0.0), hist_t(k, 0.0), hist_p(k, 0.0);
  for (std::size_t n = 0; n < truth.size(); ++n) {
    if (truth[n] < 1 || truth[n] > K || pred[n] < 1 || pred[n] > K)
      throw CategoryRangeError("rating outside [1, " + std::to_string(K) + "]");
    const auto a = static_cast<std::size_t>(truth[n] - 1);
    const auto b = static_cast<std::size_t>(pred[n] - 1);
    observed[a * k + b] += 1.0;
    hist_t[a] += 1.0;
    hist_p[b] += 1.0;
  }
  const double n = static_cast<double>(truth.size());
  const double denom_w = static_cast<double>((K - 1) * (K - 1));
  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      const double diff = static_cast<double>(a) - static_cast<double>(b);
      const double w = diff * diff / denom_w;
      num += w * observed[a * k + b];
      den += w * hist_t[a] * hist_p[b] / n;
    }
  }
  if (den == 0.0) return {1.0, true};
  return {1.0 - num / den, false};
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  const double x = df / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), 2);
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) mean += a[k] - b[k];
  mean /= n;
  double ss = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k] - mean;
    ss += d * d;
  }
  const double var = ss / (n - 1.0);
  // Differences equal up to rounding count as constant.
  double scale = std::abs(mean);
  for (std::size_t k = 0; k < a.size(); ++k)
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  if (!(std::sqrt(var) > 1e-12 * std::max(1.0, scale)))
    throw DegenerateError("paired differences have zero variance");
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  r.t_statistic = mean / std::sqrt(var / n);
  const double x = r.df / (r.df + r.t_statistic * r.t_statistic);
  r.p_value = std::min(1.0, regularized_incomplete_beta(0.5 * r.df, 0.5, x));
  return r;
}

}  // namespace irtimpute
