#include <doctest.h>

#include <cmath>
#include <random>

#include "atp/decoder/forward.hpp"
#include "atp/numkit/ops.hpp"
#include "atp/objective/objective.hpp"
#include "atp/segments.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace atp;
using namespace atp::objective;
using atp::num::Tensor;

namespace {

pruning::PruneState state_with(std::size_t layer, Tensor cumulative) {
  pruning::PruneState s;
  s.site_layer = layer;
  s.mask_combined = cumulative;
  s.cumulative_mask = std::move(cumulative);
  return s;
}

}  // namespace

TEST_CASE("segments: leading run, one run per site, last run to the end") {
  const std::vector<std::size_t> sites{4, 14, 24};
  const auto segs = layer_segments(32, sites);
  REQUIRE(segs.size() == 4);
  CHECK(segs[0].begin == 0);
  CHECK(segs[0].end == 4);
  CHECK(segs[0].source == -1);
  CHECK(segs[1].length() == 10);
  CHECK(segs[3].end == 32);
  CHECK(segs[3].length() == 8);
  CHECK(layer_segments(8, std::vector<std::size_t>{}).size() == 1);
  CHECK_THROWS_AS(layer_segments(8, std::vector<std::size_t>{3, 3}), ContractViolation);
  CHECK_THROWS_AS(layer_segments(8, std::vector<std::size_t>{8}), ContractViolation);
}

TEST_CASE("average token count: reference plans") {
  CHECK(average_token_count(std::vector<std::size_t>{4, 14, 24}, std::vector<double>{126, 88, 20}, 32, 576) ==
        143.875);
  CHECK(average_token_count(std::vector<std::size_t>{1, 13, 25}, std::vector<double>{98, 79, 16}, 32, 576) ==
        87.875);
  CHECK(average_token_count(std::vector<std::size_t>{}, std::vector<double>{}, 32, 576) == 576.0);
}

TEST_CASE("average token count: mask form equals a direct per-layer count") {
  std::mt19937_64 rng(31);
  std::bernoulli_distribution keep(0.6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> sites{1, 4, 6};
    std::vector<pruning::PruneState> states;
    std::vector<std::vector<double>> prev(2, std::vector<double>(64, 1.0));
    for (auto site : sites) {
      std::vector<double> m;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t n = 0; n < 64; ++n) {
          prev[b][n] = prev[b][n] * (keep(rng) ? 1.0 : 0.0);
          m.push_back(prev[b][n]);
        }
      states.push_back(state_with(site, Tensor::from({2, 64}, m)));
    }
    const auto n_bar = average_token_count(states, 8, 64, 2).to_vector();
    for (std::size_t b = 0; b < 2; ++b) {
      // walk layer by layer
      double total = 0.0;
      for (std::size_t layer = 0; layer < 8; ++layer) {
        double count = 64.0;
        for (std::size_t k = 0; k < sites.size(); ++k)
          if (sites[k] <= layer) {
            count = 0.0;
            for (std::size_t n = 0; n < 64; ++n) count += states[k].cumulative_mask.data()[b * 64 + n];
          }
        total += count;
      }
      CHECK(n_bar[b] == total / 8.0);
    }
  }
}

TEST_CASE("atp penalty: all ones, all zeros, half ones") {
  const auto at = [](double v) {
    std::vector<pruning::PruneState> s;
    for (std::size_t l : {4, 14, 24}) s.push_back(state_with(l, Tensor::full({1, 576}, v)));
    return atp_penalty(s, 576.0).item();
  };
  CHECK(at(1.0) == 42.0);
  CHECK(at(0.0) == 0.0);
  CHECK(at(0.5) == 21.0);
}

TEST_CASE("atp penalty is monotone in every mask entry") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(2 * 16);
  for (auto& v : m) v = u(rng);
  std::vector<pruning::PruneState> s{state_with(2, Tensor::from({2, 16}, m))};
  const double base = atp_penalty(s, 16.0).item();
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto up = m;
    up[i] = std::min(1.0, up[i] + 0.1);
    std::vector<pruning::PruneState> t{state_with(2, Tensor::from({2, 16}, up))};
    CHECK(atp_penalty(t, 16.0).item() >= base);
  }
}

TEST_CASE("target loss: zero at the target, example, symmetry") {
  CHECK(target_loss(Tensor::scalar(16.0), 16.0).item() == 0.0);
  CHECK(target_loss(Tensor::scalar(143.875), 144.0).item() == 0.125);
  CHECK(target_loss(Tensor::scalar(3.0), 7.5).item() == target_loss(Tensor::scalar(7.5), 3.0).item());
  CHECK(target_loss(Tensor::from({2}, {10.0, 20.0}), 16.0).item() == 1.0);
}

TEST_CASE("ntp loss: uniform logits, confident logits, hand example") {
  const std::vector<std::int64_t> t1{5, -1, 63};
  CHECK(ntp_loss(Tensor::zeros({1, 3, 64}), t1).item() == doctest::Approx(std::log(64.0)).epsilon(1e-14));

  std::vector<double> big(2 * 4, 0.0);
  big[1] = 50.0;
  big[4 + 3] = 50.0;
  const std::vector<std::int64_t> t2{1, 3};
  CHECK(ntp_loss(Tensor::from({2, 4}, big), t2).item() < 1e-20);

  const std::vector<std::int64_t> t3{1, 2};
  const double e = std::exp(1.0);
  const double expected = 0.5 * ((std::log(e + e * e + 1.0) - 2.0) + (std::log(2.0 + e * e * e) - 3.0));
  CHECK(ntp_loss(Tensor::from({2, 3}, {1, 2, 0, 0, 0, 3}), t3).item() == doctest::Approx(expected).epsilon(1e-14));

  const std::vector<std::int64_t> none{-1, -1};
  CHECK_THROWS_AS(ntp_loss(Tensor::zeros({2, 3}), none), ContractViolation);
}

TEST_CASE("answer targets supervise only answer tokens") {
  const decoder::TokenSequence seq({2, 2}, {0, 1, 2, 3}, {10, 11, 12, 13, 14}, 3);
  CHECK(answer_targets(seq) == std::vector<std::int64_t>{-1, -1, 13, 14, -1});
}

TEST_CASE("total loss: examples and gradient wrt masks") {
  BudgetConfig cfg;
  CHECK(total_loss(Tensor::scalar(2.0), Tensor::scalar(42.0), Tensor::scalar(0.125), cfg).item() == 4.125);
  BudgetConfig off;
  off.lambda_atp = off.lambda_target = 0.0;
  CHECK(total_loss(Tensor::scalar(2.5), Tensor::scalar(42.0), Tensor::scalar(3.0), off).item() == 2.5);

  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::vector<double> a(2 * 8), b(2 * 8);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  auto m1 = Tensor::from({2, 8}, a), m2 = Tensor::from({2, 8}, b);
  cfg.lv_norm = 8.0;
  cfg.n_target = 2.0;
  const auto loss = [&] {
    std::vector<pruning::PruneState> s{state_with(1, m1), state_with(3, num::mul(m1, m2))};
    const auto n_bar = average_token_count(s, 4, 8, 2);
    return total_loss(Tensor::scalar(1.0), atp_penalty(s, cfg.lv_norm), target_loss(n_bar, cfg.n_target), cfg);
  };
  const auto r = atp::testing::grad_check({m1, m2}, loss);
  CHECK(r.max_rel_error <= 1e-6);

  // Each component's gradient, weighted by its lambda, sums to the total.
  const auto grads_of = [&](const std::function<Tensor()>& f) {
    m1.zero_grad();
    num::backward(f());
    auto g = m1.grad();
    return std::vector<double>(g.begin(), g.end());
  };
  const auto g_total = grads_of(loss);
  const auto g_atp = grads_of([&] {
    std::vector<pruning::PruneState> s{state_with(1, m1), state_with(3, num::mul(m1, m2))};
    return atp_penalty(s, cfg.lv_norm);
  });
  const auto g_target = grads_of([&] {
    std::vector<pruning::PruneState> s{state_with(1, m1), state_with(3, num::mul(m1, m2))};
    return target_loss(average_token_count(s, 4, 8, 2), cfg.n_target);
  });
  for (std::size_t i = 0; i < g_total.size(); ++i)
    CHECK(g_total[i] == doctest::Approx(cfg.lambda_atp * g_atp[i] + cfg.lambda_target * g_target[i]).epsilon(1e-12));
}

TEST_CASE("budget config validation") {
  BudgetConfig cfg;
  CHECK_NOTHROW(cfg.validate(64));
  cfg.n_target = 65;
  CHECK_THROWS_AS(cfg.validate(64), ConfigError);
  cfg.n_target = 16;
  cfg.lambda_atp = -0.1;
  CHECK_THROWS_AS(cfg.validate(64), ConfigError);
}
