#pragma once

#include <span>
#include <vector>

namespace irtimpute {

double rmse(std::span<const double> a, std::span<const double> b);

// Throws DegenerateError when either series has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct QwkResult {
  double value = 1.0;
  // Set when both raters are constant and equal, so the expected
  // disagreement is zero and kappa is 1 by convention.
  bool degenerate = false;
};

// Quadratic weighted kappa between two ratings on categories 1..K.
QwkResult qwk(std::span<const int> truth, std::span<const int> pred, int K);

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  int df = 0;
};

// Two-sided paired t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

}  // namespace irtimpute
