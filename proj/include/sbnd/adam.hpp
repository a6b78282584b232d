// Copyright 2026 The sbnd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace sbnd {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction; minimizes (steps against the gradient).
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamOptions opt) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> x, std::span<const double> g) {
    if (x.size() != m_.size() || g.size() != m_.size())
      throw std::invalid_argument("Adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g[i];
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      x[i] -= opt_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opt_.eps);
    }
  }

  const AdamOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }
  long steps() const { return t_; }

 private:
  AdamOptions opt_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace sbnd
