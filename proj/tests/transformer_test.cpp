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

#include "sbnd/transformer.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numbers>

#include "sbnd/adam.hpp"

using namespace sbnd;

namespace {

ArConfig small_config(int n, int n_angles) {
  ArConfig c;
  c.n_sites = n;
  c.n_angles = n_angles;
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers = 2;
  c.d_ff = 24;
  return c;
}

/// Model with every parameter perturbed so the head is non-trivial.
ArModel random_model(const ArConfig& c, std::uint64_t seed, double scale = 0.3) {
  ArModel m(c, Rng(seed));
  Rng rng(seed + 1000);
  for (double& p : m.params()) p += scale * rng.normal();
  return m;
}

std::vector<double> random_angles(int n, Rng& rng) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (double& x : t) x = 2 * std::numbers::pi * rng.uniform() - std::numbers::pi;
  return t;
}

}  // namespace

TEST(ar_model, default_width_layout) {
  ArConfig c;
  c.n_sites = 10;
  c.n_angles = 10;
  ArModel m(c, Rng(1));
  EXPECT_EQ(m.tensor("layer1.attn.Wq").rows, 64);
  EXPECT_EQ(m.tensor("embed.position").cols, 20);
  std::size_t total = 0;
  for (const auto& t : m.tensors()) {
    EXPECT_EQ(t.offset, total);
    total += t.size();
  }
  EXPECT_EQ(total, m.n_params());
}

TEST(ar_model, fresh_model_is_uniform) {
  ArConfig c;
  c.n_sites = 6;
  ArModel m(c, Rng(3));
  for (Bitstring x : {0u, 5u, 63u, 17u})
    EXPECT_NEAR(m.log_prob(x), -6 * std::log(2.0), 1e-12);
}

TEST(ar_model, normalized_by_enumeration) {
  Rng rng(5);
  for (int p : {0, 8}) {
    const ArModel m = random_model(small_config(8, p), 11 + p);
    const auto th = random_angles(p, rng);
    std::vector<Bitstring> all(256);
    for (Bitstring x = 0; x < 256; ++x) all[x] = x;
    for (double T : {1.0, 1.4}) {
      double z = 0;
      for (double lp : m.log_probs(all, th, T)) z += std::exp(lp);
      EXPECT_NEAR(z, 1.0, 1e-8) << "angles=" << p << " T=" << T;
    }
  }
}

TEST(ar_model, infinite_temperature_is_uniform) {
  const ArModel m = random_model(small_config(5, 0), 7, 1.0);
  for (Bitstring x : {0u, 9u, 31u}) {
    EXPECT_GT(std::abs(m.log_prob(x, {}, 1.0) + 5 * std::log(2.0)), 1e-3);
    EXPECT_LT(std::abs(m.log_prob(x, {}, 1e9) + 5 * std::log(2.0)), 1e-6);
  }
}

TEST(ar_model, rejects_bad_inputs) {
  const ArModel m(small_config(3, 2), Rng(1));
  const double th[2] = {0.1, 0.2};
  EXPECT_THROW(m.log_prob(0, th, 0.0), std::invalid_argument);
  EXPECT_THROW(m.log_prob(0, th, -1.0), std::invalid_argument);
  EXPECT_THROW(m.log_prob(0, {}, 1.0), std::invalid_argument);
  EXPECT_THROW(ArModel(small_config(0, 0), Rng(1)), std::invalid_argument);
}

TEST(ar_model, causal_masking) {
  Rng rng(8);
  const ArModel m = random_model(small_config(7, 3), 19);
  const auto th = random_angles(3, rng);
  for (int rep = 0; rep < 20; ++rep) {
    const Bitstring x = rng.below(128);
    const int j = static_cast<int>(rng.below(7));
    const Eigen::MatrixXd a = m.conditional_logits(x, th);
    const Eigen::MatrixXd b = m.conditional_logits(x ^ (Bitstring{1} << j), th);
    for (int i = 0; i <= j; ++i) EXPECT_LT((a.col(i) - b.col(i)).norm(), 1e-13);
    if (j + 1 < 7) {
      EXPECT_GT((a.col(j + 1) - b.col(j + 1)).norm(), 1e-8);
    }
  }
}

TEST(ar_model, batch_matches_single_evaluation) {
  Rng rng(9);
  const ArModel m = random_model(small_config(6, 6), 23);
  const auto th = random_angles(6, rng);
  std::vector<Bitstring> xs = {0, 3, 17, 63, 40, 3};
  const auto lp = m.log_probs(xs, th, 1.2);
  for (std::size_t k = 0; k < xs.size(); ++k)
    EXPECT_NEAR(lp[k], m.log_prob(xs[k], th, 1.2), 1e-12);
}

TEST(sample_batch, uniform_model_multinomial) {
  ArConfig c;
  c.n_sites = 2;
  c.d_model = 8;
  c.n_heads = 2;
  const ArModel m(c, Rng(2));
  Rng rng(99);
  ArWorkspace ws;
  std::vector<double> counts(4, 0.0);
  const std::size_t chunk = 50000, n = 1000000;
  for (std::size_t done = 0; done < n; done += chunk) {
    m.sample(ws, chunk, {}, 1.0, rng);
    for (Bitstring x : ws.configs) counts[x] += 1;
  }
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (double k : counts) EXPECT_LE(std::abs(k - 0.25 * n), 4 * sigma);
}

TEST(sample_batch, empirical_matches_log_prob) {
  const ArModel m = random_model(small_config(3, 2), 31, 0.5);
  const double th[2] = {0.4, -1.1};
  Rng rng(5);
  ArWorkspace ws;
  std::vector<double> counts(8, 0.0);
  const std::size_t n = 200000;
  for (int rep = 0; rep < 4; ++rep) {
    m.sample(ws, n / 4, th, 1.0, rng);
    for (std::size_t b = 0; b < ws.configs.size(); ++b) {
      counts[ws.configs[b]] += 1;
      if (b < 5) {
        EXPECT_NEAR(ws.log_prob[b], m.log_prob(ws.configs[b], th), 1e-12);
      }
    }
  }
  for (Bitstring x = 0; x < 8; ++x) {
    const double p = std::exp(m.log_prob(x, th));
    EXPECT_LE(std::abs(counts[x] - n * p), 4 * std::sqrt(n * p * (1 - p)) + 1e-9);
  }
}

TEST(sample_batch, saturated_and_deterministic) {
  ArModel m(small_config(5, 0), Rng(4));
  const TensorInfo& hb = m.tensor("head.b");
  m.params()[hb.offset + 1] = 80.0;  // always 1
  Rng rng(3);
  ArWorkspace ws;
  m.sample(ws, 100, {}, 1.0, rng);
  for (Bitstring x : ws.configs) EXPECT_EQ(x, 31u);

  const ArModel r = random_model(small_config(5, 0), 8);
  Rng a(77), b(77);
  ArWorkspace wa, wb;
  r.sample(wa, 64, {}, 1.3, a);
  r.sample(wb, 64, {}, 1.3, b);
  EXPECT_EQ(wa.configs, wb.configs);
}

TEST(ar_gradient, matches_finite_differences) {
  Rng rng(12);
  const ArConfig c = small_config(5, 5);
  ArModel m = random_model(c, 41);
  const auto th = random_angles(5, rng);
  const std::vector<Bitstring> xs = {0, 7, 21, 30, 11};
  const std::vector<double> w = {0.7, -1.3, 0.4, 2.0, -0.2};
  const double T = 1.3;
  auto loss = [&](const ArModel& mm, const std::vector<double>& t) {
    const auto lp = mm.log_probs(xs, t, T);
    double s = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) s += w[k] * lp[k];
    return s;
  };
  ArWorkspace ws;
  m.evaluate(ws, xs, th, T);
  std::vector<double> g(m.n_params(), 0.0), gt(5, 0.0);
  m.backward(ws, w, g, gt);

  const double step = 1e-5;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t k = rng.below(m.n_params());
    const double save = m.params()[k];
    m.params()[k] = save + step;
    const double lp = loss(m, th);
    m.params()[k] = save - step;
    const double lm = loss(m, th);
    m.params()[k] = save;
    const double fd = (lp - lm) / (2 * step);
    EXPECT_LE(std::abs(fd - g[k]), 1e-5 * std::max(std::abs(fd), std::abs(g[k])) + 1e-9)
        << "param " << k << " fd=" << fd << " an=" << g[k];
  }
  // Every tensor family, not only random picks.
  for (const auto& t : m.tensors()) {
    const std::size_t k = t.offset + t.size() / 2;
    const double save = m.params()[k];
    m.params()[k] = save + step;
    const double lp = loss(m, th);
    m.params()[k] = save - step;
    const double lm = loss(m, th);
    m.params()[k] = save;
    const double fd = (lp - lm) / (2 * step);
    EXPECT_LE(std::abs(fd - g[k]), 1e-5 * std::max(std::abs(fd), std::abs(g[k])) + 1e-9)
        << t.name;
  }
  for (int j = 0; j < 5; ++j) {
    auto tp = th, tm = th;
    tp[static_cast<std::size_t>(j)] += step;
    tm[static_cast<std::size_t>(j)] -= step;
    const double fd = (loss(m, tp) - loss(m, tm)) / (2 * step);
    EXPECT_LE(std::abs(fd - gt[static_cast<std::size_t>(j)]),
              1e-5 * std::max(std::abs(fd), std::abs(gt[static_cast<std::size_t>(j)])) + 1e-9)
        << "theta " << j;
  }
}

TEST(ar_gradient, sampled_workspace_reuse) {
  // backward on a workspace filled by sample equals backward after evaluate.
  const ArModel m = random_model(small_config(6, 3), 5);
  const double th[3] = {0.3, 1.0, -2.0};
  Rng rng(1);
  ArWorkspace ws, we;
  m.sample(ws, 40, th, 1.0, rng);
  m.evaluate(we, ws.configs, th, 1.0);
  std::vector<double> w(40, 1.0), g1(m.n_params(), 0.0), g2(m.n_params(), 0.0), t1(3, 0.0),
      t2(3, 0.0);
  m.backward(ws, w, g1, t1);
  m.backward(we, w, g2, t2);
  for (std::size_t k = 0; k < g1.size(); ++k) ASSERT_NEAR(g1[k], g2[k], 1e-12);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(t1[static_cast<std::size_t>(j)], t2[static_cast<std::size_t>(j)], 1e-12);
}

TEST(ar_gradient, maximum_likelihood_fit) {
  // Adam on the negative log-likelihood of a target distribution drives the
  // model to it.
  ArModel m(small_config(3, 0), Rng(2));
  const std::vector<Bitstring> xs = {0, 5, 5, 6};
  Adam opt(m.n_params(), {.lr = 1e-2});
  ArWorkspace ws;
  for (int it = 0; it < 400; ++it) {
    m.evaluate(ws, xs, {}, 1.0);
    std::vector<double> g(m.n_params(), 0.0), w(4, -1.0);
    m.backward(ws, w, g, {});
    opt.step(m.params(), g);
  }
  EXPECT_NEAR(std::exp(m.log_prob(5)), 0.5, 0.02);
  EXPECT_NEAR(std::exp(m.log_prob(0)), 0.25, 0.02);
  EXPECT_LT(std::exp(m.log_prob(7)), 0.02);
}
