#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "atp/decoder/forward.hpp"
#include "atp/numkit/ops.hpp"
#include "atp/pruning/atp.hpp"
#include "atp/pruning/plan.hpp"
#include "atp/pruning/spatial.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace atp;
using namespace atp::pruning;
using atp::decoder::Layout;
using atp::num::Tensor;
using atp::testing::random_sequence;
using atp::testing::tiny_config;
using atp::testing::tiny_plan;

namespace {

Layout make_layout(std::size_t vision, std::size_t text, std::size_t prompt) {
  Layout l;
  l.original_vision = vision;
  for (std::size_t i = 0; i < vision; ++i) {
    l.vision_slots.push_back(i);
    l.positions.push_back(decoder::Position::vision(0, i));
  }
  for (std::size_t t = 0; t < text; ++t) l.positions.push_back(decoder::Position::text(vision + t));
  l.text_len = text;
  l.prompt_len = prompt;
  return l;
}

// One-head map [1, 1, L, L] from row-major values.
Tensor one_head(std::size_t L, std::vector<double> values) { return Tensor::from({1, 1, L, L}, std::move(values)); }

std::vector<double> vec(const Tensor& t) { return t.to_vector(); }

}  // namespace

TEST_CASE("self score: uniform logits, hand average and shift") {
  const auto layout = make_layout(2, 1, 1);
  CHECK(vec(self_score(Tensor::full({1, 2, 3, 3}, 1.5), layout)) == std::vector<double>{1.5, 1.5});

  const auto logits = one_head(3, {1, 3, 0, 5, 7, 0, 0, 0, 0});
  CHECK(vec(self_score(logits, layout)) == std::vector<double>{3.0, 5.0});
  CHECK(vec(self_score(logits, layout, {}, SelfScoreDirection::keys)) == std::vector<double>{2.0, 6.0});

  const auto shifted = self_score(num::add_scalar(logits, 2.25), layout).to_vector();
  CHECK(shifted[0] == 5.25);
  CHECK(shifted[1] == 7.25);

  // Weighted queries: a zero-weight query drops out of the average.
  const auto w = Tensor::from({1, 2}, {0.0, 1.0});
  CHECK(vec(self_score(logits, layout, w)) == std::vector<double>{5.0, 7.0});
  CHECK_THROWS_AS(self_score(logits, layout, Tensor::zeros({1, 2})), ContractViolation);
  CHECK_THROWS_AS(self_score(logits, make_layout(0, 3, 1)), ContractViolation);
}

TEST_CASE("cross score: concentrated attention, hand average, sub-distribution bound") {
  const auto layout1 = make_layout(3, 1, 1);
  auto probs = one_head(4, {1, 0, 0, 0, 0.5, 0.5, 0, 0, 0.2, 0.3, 0.5, 0, 1, 0, 0, 0});
  CHECK(vec(cross_score(probs, layout1)) == std::vector<double>{1.0, 0.0, 0.0});

  const auto layout2 = make_layout(2, 2, 2);
  probs = one_head(4, {1, 0, 0, 0, 0.5, 0.5, 0, 0, 0.3, 0.1, 0.6, 0, 0.5, 0.1, 0.2, 0.2});
  const auto s = vec(cross_score(probs, layout2));
  CHECK(s[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.1).epsilon(1e-15));

  auto c = tiny_config();
  std::mt19937_64 rng(21);
  const auto p = decoder::DecoderParams::init(c, rng);
  const auto seq = random_sequence(c, rng);
  const auto h = Tensor::randn({1, seq.length(), c.d_model}, rng);
  const auto out = decoder::attention_layer(h, {}, p.layers[0], c, seq.original_positions());
  const auto sc = vec(cross_score(out.attn_probs, Layout::of(seq)));
  double total = 0.0;
  for (double v : sc) total += v;
  CHECK(total <= 1.0);

  CHECK_THROWS_AS(cross_score(probs, make_layout(2, 2, 0)), ContractViolation);
}

TEST_CASE("combine redundant: examples and affine invariance") {
  const std::vector<std::uint8_t> all{1, 1};
  CHECK(vec(combine_redundant(Tensor::from({1, 2}, {0, 1}), Tensor::from({1, 2}, {0, 1}), all)) ==
        std::vector<double>{0.0, 1.0});
  CHECK(vec(combine_redundant(Tensor::from({1, 2}, {2, 4}), Tensor::from({1, 2}, {7, 7}), all)) ==
        std::vector<double>{0.25, 0.75});

  std::mt19937_64 rng(22);
  const auto a = Tensor::randn({2, 6}, rng);
  const auto b = Tensor::randn({2, 6}, rng);
  const std::vector<std::uint8_t> support{1, 1, 0, 1, 1, 1, 1, 1, 1, 1, 0, 1};
  const auto base = vec(combine_redundant(a, b, support));
  const auto moved = vec(combine_redundant(num::add_scalar(num::scale(a, 3.5), -2.0), b, support));
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-12));
  CHECK(base[2] == 0.0);
  CHECK(base[10] == 0.0);
}

TEST_CASE("spatial score: coarsest level wins and unsampled tokens get zero") {
  const auto grid = SpatialGrid::uniform({8, 8});
  const auto s = spatial_score(grid);
  CHECK(s[0 * 8 + 0] == 0.953125);
  CHECK(s[0 * 8 + 4] == 0.8125);
  CHECK(s[2 * 8 + 2] == 0.25);
  CHECK(s[1 * 8 + 1] == 0.0);
  CHECK(grid.coarsest_level(0) == 2);
  CHECK(grid.coarsest_level(9) == -1);

  CHECK_THROWS_AS(SpatialGrid::uniform({8, 8}, {2, 4, 8}, 4.0).validate(), ConfigError);
  CHECK_THROWS_AS(SpatialGrid::uniform({8, 8}, {3}).validate(), ConfigError);
  CHECK_THROWS_AS(SpatialGrid::uniform({8, 8}, {4, 2}).validate(), ConfigError);
}

TEST_CASE("thresholds: zero weights give one half and a hand-set head") {
  std::mt19937_64 rng(23);
  auto head = ThresholdHead::init(1, 1, rng);
  head.w_z = Tensor::zeros({2, 1});
  head.b_z = Tensor::zeros({1});
  head.w_r = Tensor::zeros({1, 1});
  head.b_r = Tensor::zeros({1});
  head.w_s = Tensor::zeros({1, 1});
  head.b_s = Tensor::zeros({1});
  const auto s1 = Tensor::from({2, 1}, {1.0, 0.0});
  const auto s2 = Tensor::from({2, 1}, {0.0, 1.0});
  auto th = predict_thresholds(head, s1, s2);
  CHECK(vec(th.theta_r) == std::vector<double>{0.5, 0.5});
  CHECK(vec(th.theta_s) == std::vector<double>{0.5, 0.5});

  head.w_z = Tensor::from({2, 1}, {0.7, -0.4});
  head.w_r = Tensor::from({1, 1}, {1.0});
  head.w_s = Tensor::from({1, 1}, {1.0});
  th = predict_thresholds(head, s1, s2);
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  CHECK(th.theta_r.data()[0] == doctest::Approx(sig(0.7)).epsilon(1e-15));
  CHECK(th.theta_r.data()[1] == doctest::Approx(sig(-0.4)).epsilon(1e-15));
  CHECK(th.theta_s.data()[1] == doctest::Approx(sig(-0.4)).epsilon(1e-15));
  const auto again = predict_thresholds(head, s1, s2);
  CHECK(vec(again.theta_r) == vec(th.theta_r));

  auto wide = ThresholdHead::init(4, 8, rng);
  CHECK_THROWS_AS(predict_thresholds(wide, s1, s2), ContractViolation);
}

TEST_CASE("soft masks: midpoint, max composition, irretrievability") {
  const std::vector<double> spatial{0.5, 0.0, 0.9};
  const auto s_red = Tensor::from({1, 3}, {0.3, 0.7, 0.1});
  const auto prev = Tensor::from({1, 3}, {1.0, 0.0, 1.0});
  const auto m = soft_masks(s_red, spatial, Tensor::full({1, 1}, 0.3), Tensor::full({1, 1}, 0.5), 20.0, prev);
  CHECK(m.mask_r.data()[0] == 0.5);
  CHECK(m.mask_s.data()[0] == 0.5);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(m.combined.data()[i] == std::max(m.mask_r.data()[i], m.mask_s.data()[i]));
  CHECK(m.cumulative.data()[1] == 0.0);

  const auto two = soft_masks(Tensor::from({1, 1}, {std::log(0.25) / 20.0}), std::vector<double>{std::log(9.0) / 20.0},
                              Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), 20.0);
  CHECK(two.mask_r.data()[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(two.combined.data()[0] == doctest::Approx(0.9).epsilon(1e-14));
  CHECK_THROWS_AS(soft_masks(s_red, spatial, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), 0.0), ContractViolation);
}

TEST_CASE("hard prune: rule, vacuous thresholds, floor guard") {
  const std::vector<double> s_red{0.9, 0.1, 0.4}, s_sp{0.0, 0.8, 0.0};
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(hard_prune(s_red, s_sp, 0.5, 0.5, all) == std::vector<std::size_t>{0, 1});
  CHECK(hard_prune(s_red, s_sp, 0.0, 0.0, all) == all);
  CHECK(hard_prune(s_red, s_sp, 1.0 + 1e-9, 1.0 + 1e-9, all) == std::vector<std::size_t>{0});
  const std::vector<std::size_t> some{1, 2};
  CHECK(hard_prune(s_red, s_sp, 2.0, 2.0, some) == std::vector<std::size_t>{2});
  CHECK(hard_prune(s_red, s_sp, 0.0, 0.0, some) == some);
  const std::vector<double> tied{0.3, 0.3, 0.3};
  CHECK(hard_prune(tied, s_sp, 2.0, 2.0, all) == std::vector<std::size_t>{0});
}

TEST_CASE("top-k retain breaks ties toward the lower index") {
  const std::vector<double> s{0.2, 0.5, 0.5, 0.1, 0.9};
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  CHECK(top_k_retain(s, all, 2) == std::vector<std::size_t>{1, 4});
  CHECK(top_k_retain(s, all, 9) == all);
  const std::vector<std::size_t> some{0, 2, 3};
  CHECK(top_k_retain(s, some, 1) == std::vector<std::size_t>{2});
}

TEST_CASE("property: raising a threshold never grows the retained set") {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto s_sp = spatial_score(SpatialGrid::uniform({8, 8}));
  std::vector<std::size_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s_red(64);
    for (auto& v : s_red) v = u(rng);
    const double ts = u(rng);
    double prev_size = 65;
    std::vector<std::size_t> prev = all;
    for (double tr = 0.0; tr <= 1.05; tr += 0.05) {
      const auto kept = hard_prune(s_red, s_sp, tr, ts, all);
      CHECK(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end()));
      CHECK(kept.size() <= prev_size);
      prev_size = static_cast<double>(kept.size());
      prev = kept;
    }
    prev = all;
    for (double t2 = 0.0; t2 <= 1.05; t2 += 0.05) {
      const auto kept = hard_prune(s_red, s_sp, 0.5, t2, all);
      CHECK(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end()));
      prev = kept;
    }
  }
}

TEST_CASE("property: the spatial sweep removes finer grids first") {
  const auto grid = SpatialGrid::uniform({8, 8});
  const auto s_sp = spatial_score(grid);
  const std::vector<double> s_red(64, 0.0);
  std::vector<std::size_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::vector<std::size_t>> level_sets(grid.levels.size());
  for (std::size_t lv = 0; lv < grid.levels.size(); ++lv)
    for (std::size_t n = 0; n < 64; ++n)
      if (grid.contains(lv, n)) level_sets[lv].push_back(n);
  for (double ts = 0.01; ts <= 1.0; ts += 0.01) {
    const auto kept = hard_prune(s_red, s_sp, 2.0, ts, all);
    bool is_level = false;
    for (const auto& set : level_sets) is_level = is_level || set == kept;
    // Above every spatial score only the floor guard's single token remains.
    CHECK((is_level || (ts > 0.953125 && kept.size() == 1)));
  }
}

TEST_CASE("property: soft masks approach hard decisions at large temperature") {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double theta_r = u(rng), theta_s = u(rng);
    std::vector<double> red, sp;
    while (red.size() < 32) {
      const double a = u(rng), b = u(rng);
      if (std::abs(a - theta_r) >= 0.05 && std::abs(b - theta_s) >= 0.05) {
        red.push_back(a);
        sp.push_back(b);
      }
    }
    const auto m = soft_masks(Tensor::from({1, 32}, red), sp, Tensor::full({1, 1}, theta_r),
                              Tensor::full({1, 1}, theta_s), 200.0);
    for (std::size_t n = 0; n < 32; ++n) {
      const double hard = (red[n] >= theta_r || sp[n] >= theta_s) ? 1.0 : 0.0;
      CHECK(std::abs(m.combined.data()[n] - hard) <= 1e-4);
    }
  }
}

TEST_CASE("property: head input width stays 2 L_v at every site and pruned scores are zero") {
  auto c = tiny_config(4);
  std::mt19937_64 rng(26);
  const auto p = decoder::DecoderParams::init(c, rng);
  const auto plan = tiny_plan({1, 2, 3});
  auto heads = init_heads(plan, 16, rng);
  for (auto& h : heads) h.b_r = Tensor::full({1}, 0.3);
  const std::vector<decoder::TokenSequence> batch{random_sequence(c, rng)};
  const auto res = decoder::decoder_forward(c, p, batch, plan, AdaptivePolicy{&heads}, {decoder::Mode::infer, false});
  for (std::size_t k = 0; k < res.sites.size(); ++k) {
    const auto& sc = res.sites[k].scores;
    CHECK(sc.s_self_norm.shape() == num::Shape{1, 16});
    CHECK(sc.s_cross_norm.shape() == num::Shape{1, 16});
    CHECK(sc.s_redundant.shape() == num::Shape{1, 16});
    if (k == 0) continue;
    const auto& before = res.sites[k - 1].retained_indices[0];
    const std::set<std::size_t> alive(before.begin(), before.end());
    for (std::size_t n = 0; n < 16; ++n) {
      const double r = sc.s_redundant.data()[n];
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
      if (!alive.count(n)) {
        CHECK(r == 0.0);
        CHECK(sc.s_self.data()[n] == 0.0);
      }
    }
  }
}

TEST_CASE("property: threshold heads receive gradient and match finite differences") {
  auto c = tiny_config();
  std::mt19937_64 rng(27);
  const auto p = decoder::DecoderParams::init(c, rng);
  const auto plan = tiny_plan({1, 2});
  auto heads = init_heads(plan, 16, rng);
  for (auto& h : heads) h.b_r = Tensor::full({1}, 0.0);
  for (auto& h : heads) {
    h.b_r.set_requires_grad(true);
  }
  const std::vector<decoder::TokenSequence> batch{random_sequence(c, rng), random_sequence(c, rng)};
  const auto loss = [&] {
    const auto res = decoder::decoder_forward(c, p, batch, plan, AdaptivePolicy{&heads});
    auto total = num::sum_all(res.sites.back().cumulative_mask);
    return num::add(total, num::scale(num::sum_all(res.logits), 1e-2));
  };
  std::vector<Tensor> leaves;
  for (const auto& h : heads)
    for (const auto& t : {h.w_z, h.b_z, h.w_r, h.b_r, h.w_s, h.b_s}) leaves.push_back(t);
  std::vector<std::pair<std::size_t, std::size_t>> pick;
  for (std::size_t i = 0; i < leaves.size(); ++i) pick.emplace_back(i, 0);
  pick.emplace_back(0, 17);
  pick.emplace_back(6, 40);
  const auto result = atp::testing::grad_check(leaves, loss, 1e-6, pick);
  CHECK(result.max_rel_error <= 1e-5);

  num::backward(loss());
  double norm = 0.0;
  for (const auto& leaf : leaves)
    for (double g : leaf.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("evaluate site: fixed ratio keeps the top scores and warns when clamped") {
  auto c = tiny_config();
  std::mt19937_64 rng(28);
  const auto p = decoder::DecoderParams::init(c, rng);
  const std::vector<decoder::TokenSequence> batch{random_sequence(c, rng)};
  const auto plan = tiny_plan({1, 2});
  const auto res =
      decoder::decoder_forward(c, p, batch, plan, FixedRatioPolicy{{6, 3}}, {decoder::Mode::infer, false});
  REQUIRE(res.sites.size() == 2);
  CHECK(res.sites[0].retained_indices[0].size() == 6);
  CHECK(res.sites[1].retained_indices[0].size() == 3);
  const auto& s = res.sites[0].scores.s_redundant.data();
  const auto& kept = res.sites[0].retained_indices[0];
  double min_kept = 2.0, max_dropped = -1.0;
  for (std::size_t n = 0; n < 16; ++n) {
    if (std::binary_search(kept.begin(), kept.end(), n))
      min_kept = std::min(min_kept, s[n]);
    else
      max_dropped = std::max(max_dropped, s[n]);
  }
  CHECK(min_kept >= max_dropped);

  const auto clamped =
      decoder::decoder_forward(c, p, batch, plan, FixedRatioPolicy{{4, 10}}, {decoder::Mode::infer, false});
  CHECK(clamped.sites[1].retained_indices[0].size() == 4);
}
