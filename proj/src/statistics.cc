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
#include "storylab/statistics.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "storylab/common.h"

namespace storylab {

double NormalCdf(double z) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

double NormalQuantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double TwoSidedNormalP(double estimate, double std_error) {
  if (!(std_error > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
  double z = std::abs(estimate / std_error);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(
                                  boost::math::normal_distribution<double>(), z)));
}

double Mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double SampleVariance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = Mean(v), ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / (v.size() - 1);
}

WelchTest WelchTTest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::kDegenerateArm, "t-test needs two values per sample");
  }
  WelchTest t;
  double va = SampleVariance(a) / a.size();
  double vb = SampleVariance(b) / b.size();
  t.difference = Mean(a) - Mean(b);
  t.std_error = std::sqrt(va + vb);
  if (!(t.std_error > 0.0)) {
    t.df = static_cast<double>(a.size() + b.size() - 2);
    t.p_value = t.difference == 0.0 ? 1.0 : 0.0;
    return t;
  }
  t.df = (va + vb) * (va + vb) /
         (va * va / (a.size() - 1) + vb * vb / (b.size() - 1));
  double stat = std::abs(t.difference / t.std_error);
  boost::math::students_t_distribution<double> dist(t.df);
  t.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, stat)));
  return t;
}

std::size_t RegressionTable::Index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::kInvariant, "no coefficient named " + name);
  return it - names.begin();
}

RegressionTable FitOls(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                       const std::vector<std::string>& names,
                       const OlsOptions& options) {
  const Eigen::Index n = y.size();
  if (x.rows() != n || static_cast<std::size_t>(x.cols()) != names.size()) {
    throw Error(ErrorCode::kInvariant, "regression design shape mismatch");
  }
  RegressionTable out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    bool constant = n > 0 && (x.col(c).array() == x(0, c)).all();
    if (options.add_intercept && options.drop_constant_columns && constant) {
      out.dropped.push_back(names[c]);
    } else {
      keep.push_back(c);
    }
  }
  const Eigen::Index p = static_cast<Eigen::Index>(keep.size()) + (options.add_intercept ? 1 : 0);
  Eigen::MatrixXd design(n, p);
  Eigen::Index col = 0;
  if (options.add_intercept) {
    design.col(col++).setOnes();
    out.names.push_back(kInterceptName);
  }
  for (Eigen::Index c : keep) {
    design.col(col++) = x.col(c);
    out.names.push_back(names[c]);
  }
  if (n < p || p == 0) throw Error(ErrorCode::kRankDeficient, "fewer observations than coefficients");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < p) throw Error(ErrorCode::kRankDeficient, "design matrix is rank deficient");
  out.coef = qr.solve(y);
  out.n = static_cast<std::size_t>(n);
  Eigen::VectorXd resid = y - design * out.coef;

  Eigen::MatrixXd bread = (design.transpose() * design).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  switch (options.variance) {
    case VarianceKind::kClassical: {
      double s2 = n > p ? resid.squaredNorm() / (n - p) : 0.0;
      out.covariance = s2 * bread;
      break;
    }
    case VarianceKind::kHc2: {
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = design.row(i);
        double h = row * bread * row.transpose();
        double w = resid(i) * resid(i) / std::max(1.0 - h, 1e-12);
        meat.noalias() += w * row.transpose() * row;
      }
      out.covariance = bread * meat * bread;
      break;
    }
    case VarianceKind::kClusterRobust: {
      if (options.clusters.size() != static_cast<std::size_t>(n)) {
        throw Error(ErrorCode::kInvariant, "one cluster label per row required");
      }
      std::map<std::int64_t, Eigen::VectorXd> score;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto [it, fresh] = score.try_emplace(options.clusters[i], Eigen::VectorXd::Zero(p));
        it->second += design.row(i).transpose() * resid(i);
      }
      for (const auto& [g, s] : score) meat.noalias() += s * s.transpose();
      double groups = static_cast<double>(score.size());
      double factor = groups > 1 ? groups / (groups - 1) : 1.0;
      out.covariance = factor * bread * meat * bread;
      break;
    }
  }
  out.std_error = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.p_value.resize(p);
  for (Eigen::Index c = 0; c < p; ++c) out.p_value(c) = TwoSidedNormalP(out.coef(c), out.std_error(c));

  double ssr = resid.squaredNorm();
  double sst = options.add_intercept ? (y.array() - y.mean()).matrix().squaredNorm()
                                     : y.squaredNorm();
  out.r_squared = sst > 0 ? 1.0 - ssr / sst : (ssr == 0 ? 1.0 : 0.0);
  return out;
}

RidgeModel RidgeModel::Fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           double lambda) {
  if (x.rows() != y.size() || y.size() == 0) {
    throw Error(ErrorCode::kInvariant, "ridge needs matching, non-empty inputs");
  }
  RidgeModel m;
  const Eigen::Index n = x.rows(), p = x.cols();
  m.mean_ = x.colwise().mean();
  m.scale_.resize(p);
  Eigen::MatrixXd z = x.rowwise() - m.mean_;
  for (Eigen::Index c = 0; c < p; ++c) {
    double sd = std::sqrt(z.col(c).squaredNorm() / n);
    m.scale_(c) = sd > 1e-12 ? sd : 0.0;
    if (m.scale_(c) > 0) z.col(c) /= m.scale_(c); else z.col(c).setZero();
  }
  m.intercept_ = y.mean();
  Eigen::MatrixXd gram = z.transpose() * z;
  gram.diagonal().array() += lambda;
  m.beta_ = gram.ldlt().solve(z.transpose() * (y.array() - m.intercept_).matrix());
  return m;
}

double RidgeModel::PredictRow(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  double v = intercept_;
  for (Eigen::Index c = 0; c < beta_.size(); ++c) {
    if (scale_(c) > 0) v += beta_(c) * (row(c) - mean_(c)) / scale_(c);
  }
  return v;
}

Eigen::VectorXd RidgeModel::Predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = PredictRow(x.row(i));
  return out;
}

std::vector<int> FoldAssignment(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::kConfig, "cross-fitting needs at least two folds");
  std::vector<int> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(i % folds);
  std::mt19937_64 rng(seed);
  std::shuffle(label.begin(), label.end(), rng);
  return label;
}

}  // namespace storylab
