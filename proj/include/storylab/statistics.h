/*
* Copyright 2026 The Storylab Authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     https://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
* ============================================================================
*/
// Statistical building blocks: normal and t reference distributions, least
// squares with robust variance estimates, and ridge regression.
#ifndef STORYLAB_STATISTICS_H_
#define STORYLAB_STATISTICS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace storylab {

double NormalCdf(double z);
double NormalQuantile(double p);
// Two-sided p-value of a z statistic. A zero standard error gives p = 1 for a
// zero estimate and p = 0 otherwise.
double TwoSidedNormalP(double estimate, double std_error);

struct WelchTest {
  double difference = 0.0;  // mean(a) - mean(b)
  double std_error = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

// Unequal-variance two-sample t-test. Requires at least two values per
// sample.
WelchTest WelchTTest(std::span<const double> a, std::span<const double> b);

double Mean(std::span<const double> v);
// Sample variance with n - 1 in the denominator.
double SampleVariance(std::span<const double> v);

enum class VarianceKind {
  kClassical,
  // Heteroskedasticity-robust, leverage adjusted.
  kHc2,
  // Cluster-robust with the G / (G - 1) small-sample factor.
  kClusterRobust,
};

struct RegressionTable {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::VectorXd std_error;
  Eigen::VectorXd p_value;
  std::size_t n = 0;
  double r_squared = 0.0;
  // Constant columns removed before fitting.
  std::vector<std::string> dropped;
  Eigen::MatrixXd covariance;

  // Index of a coefficient by name; throws Error(kInvariant) if absent.
  std::size_t Index(const std::string& name) const;
};

inline constexpr const char* kInterceptName = "(intercept)";

struct OlsOptions {
  bool add_intercept = true;
  // Only applies with an intercept: drop other constant columns.
  bool drop_constant_columns = true;
  VarianceKind variance = VarianceKind::kHc2;
  // Cluster label per row for kClusterRobust.
  std::vector<std::int64_t> clusters;
  // Without an intercept R^2 is uncentered: 1 - SSR / sum(y^2).
};

// Least squares of y on X. Throws Error(kRankDeficient) when the design is
// not full column rank and Error(kInvariant) on shape mismatch.
RegressionTable FitOls(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                       const std::vector<std::string>& names,
                       const OlsOptions& options = {});

// Ridge regression on standardized columns with an unpenalized intercept.
// Constant columns get zero weight.
class RidgeModel {
 public:
  static RidgeModel Fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        double lambda);
  double PredictRow(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  Eigen::VectorXd Predict(const Eigen::MatrixXd& x) const;

 private:
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd scale_;
  Eigen::VectorXd beta_;
  double intercept_ = 0.0;
};

// Balanced random fold labels 0..folds-1, deterministic per seed.
std::vector<int> FoldAssignment(std::size_t n, int folds, std::uint64_t seed);

}  // namespace storylab

#endif  // STORYLAB_STATISTICS_H_
