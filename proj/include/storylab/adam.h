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
#ifndef STORYLAB_ADAM_H_
#define STORYLAB_ADAM_H_

#include <cmath>
#include <cstddef>
#include <vector>

namespace storylab {

struct AdamParameters {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with lazy (sparse) moment updates: only coordinates that received a
// gradient in a step are touched, with bias correction from the global step.
class SparseAdam {
 public:
  SparseAdam(std::size_t dim, const AdamParameters& params)
      : params_(params), mom1_(dim, 0.0), mom2_(dim, 0.0) {}

  void BeginStep() {
    ++step_;
    corr1_ = 1.0 - std::pow(params_.beta1, static_cast<double>(step_));
    corr2_ = 1.0 - std::pow(params_.beta2, static_cast<double>(step_));
  }

  // x[i] -= lr * mhat / (sqrt(vhat) + eps)
  void Update(std::size_t i, double grad, double& x) {
    double& m = mom1_[i];
    double& v = mom2_[i];
    m = params_.beta1 * m + (1.0 - params_.beta1) * grad;
    v = params_.beta2 * v + (1.0 - params_.beta2) * grad * grad;
    x -= params_.learning_rate * (m / corr1_) /
         (std::sqrt(v / corr2_) + params_.epsilon);
  }

  std::size_t step() const { return step_; }

 private:
  AdamParameters params_;
  std::vector<double> mom1_;
  std::vector<double> mom2_;
  std::size_t step_ = 0;
  double corr1_ = 1.0;
  double corr2_ = 1.0;
};

}  // namespace storylab

#endif  // STORYLAB_ADAM_H_
