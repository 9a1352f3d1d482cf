#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "mrla/attention.hpp"
#include "mrla/rng.hpp"

using namespace mrla;
using T64 = Tensor<double>;

namespace {

LayerTriple<double> scalar_triple(double q, double k, double v) {
  return {T64::from_data({1, 1}, {q}), T64::from_data({1, 1}, {k}),
          T64::from_data({1, 1}, {v})};
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("self_attention_ref: single token, uniform keys, scalar closed form") {
  Rng rng(2);
  T64 x1 = T64::uniform({1, 3}, rng);
  T64 wq = T64::uniform({3, 2}, rng), wk = T64::uniform({3, 2}, rng),
      wv = T64::uniform({3, 3}, rng);
  // one token: softmax of one logit is 1, so the output is its value row
  CHECK(max_abs_diff(self_attention_ref(x1, wq, wk, wv), matmul(x1, wv)) < 1e-15);

  // all keys equal (wk = 0): every row averages the value rows
  T64 x = T64::uniform({4, 3}, rng);
  T64 o = self_attention_ref(x, wq, T64::zeros({3, 2}), wv);
  T64 v = matmul(x, wv);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += v(i, j);
    mean /= 4.0;
    for (std::size_t i = 0; i < 4; ++i) CHECK(o(i, j) == doctest::Approx(mean).epsilon(1e-12));
  }

  // T=2, D=Dk=1: hand-rolled two-term softmax oracle
  const double xv0 = 1.0, xv1 = 2.0, pq = 0.5, pk = -0.3, pv = 2.0;
  T64 x2 = T64::from_data({2, 1}, {xv0, xv1});
  T64 o2 = self_attention_ref(x2, T64::from_data({1, 1}, {pq}), T64::from_data({1, 1}, {pk}),
                              T64::from_data({1, 1}, {pv}));
  const double xs[2] = {xv0, xv1};
  for (int i = 0; i < 2; ++i) {
    double logits[2], mx = -1e300;
    for (int j = 0; j < 2; ++j) {
      logits[j] = (xs[i] * pq) * (xs[j] * pk);  // scale sqrt(Dk)=1
      mx = std::max(mx, logits[j]);
    }
    const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
    const double expected = (e0 * (xs[0] * pv) + e1 * (xs[1] * pv)) / (e0 + e1);
    CHECK(o2(i, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("mla_direct: hand evaluations and zero query") {
  std::vector<LayerTriple<double>> one{scalar_triple(2, 1, 3)};
  CHECK(mla_direct(one).item() == doctest::Approx(6.0));

  std::vector<LayerTriple<double>> two{scalar_triple(2, 1, 3), scalar_triple(1, 1, 2)};
  CHECK(mla_direct(two, 2).item() == doctest::Approx(5.0));  // 1*1*3 + 1*1*2

  std::vector<LayerTriple<double>> zq{scalar_triple(2, 1, 3), scalar_triple(0, 1, 2)};
  CHECK(mla_direct(zq).item() == 0.0);

  CHECK_THROWS_AS(mla_direct(std::vector<LayerTriple<double>>{}), contract_error);
  CHECK_THROWS_AS(mla_direct(two, 1), contract_error);
}

TEST_CASE("rla_base_step: first step, two-step oracle, zero query") {
  RecurrentKV<double> empty;
  auto [o1, s1] = rla_base_step(empty, scalar_triple(2, 1, 3));
  CHECK(o1.item() == doctest::Approx(6.0));
  CHECK(s1.t() == 1);

  auto [o2, s2] = rla_base_step(s1, scalar_triple(1, 1, 2));
  CHECK(o2.item() == doctest::Approx(5.0));
  CHECK(s2.t() == 2);

  auto [oz, sz] = rla_base_step(s2, scalar_triple(0, 1, 7));
  CHECK(oz.item() == 0.0);

  // Dk mismatch with the state
  LayerTriple<double> wide{T64::ones({1, 2}), T64::ones({1, 2}), T64::ones({1, 1})};
  CHECK_THROWS_AS(rla_base_step(s1, wide), shape_error);
}

TEST_CASE("rla_light_step: pure carry, first step, no-history term") {
  LightState<double> carry{T64::from_data({1, 2}, {3, 4}), T64::ones({1, 2})};
  LayerTriple<double> zq{T64::zeros({1, 1}), T64::ones({1, 1}),
                         T64::from_data({1, 2}, {5, 6})};
  T64 o = rla_light_step(carry, zq);
  CHECK(o(0, 0) == doctest::Approx(3.0));
  CHECK(o(0, 1) == doctest::Approx(4.0));

  LightState<double> empty;
  CHECK(rla_light_step(empty, scalar_triple(2, 1, 3)).item() == doctest::Approx(6.0));

  LightState<double> zero_prev{T64::zeros({1, 1}), T64::ones({1, 1})};
  CHECK(rla_light_step(zero_prev, scalar_triple(2, 1, 3)).item() == doctest::Approx(6.0));
}

TEST_CASE("rla_light_unrolled: single step, unit carries, recurrence oracle") {
  std::vector<LayerTriple<double>> one{scalar_triple(2, 1, 3)};
  CHECK(rla_light_unrolled(one, {T64::ones({1, 1})}).item() == doctest::Approx(6.0));

  // all lambda = 1: a plain sum of per-layer score*value terms
  std::vector<LayerTriple<double>> trs{scalar_triple(2, 1, 3), scalar_triple(1, 2, 4),
                                       scalar_triple(-1, 1, 2)};
  std::vector<T64> ones_lams(3, T64::ones({1, 1}));
  const double plain = 2 * 1 * 3 + 1 * 2 * 4 + (-1) * 1 * 2;
  CHECK(rla_light_unrolled(trs, ones_lams).item() == doctest::Approx(plain));

  // random 3-step instance equals three chained steps
  Rng rng(31);
  std::vector<LayerTriple<double>> rnd;
  std::vector<T64> lams;
  for (int i = 0; i < 3; ++i) {
    rnd.push_back({T64::uniform({1, 2}, rng), T64::uniform({1, 2}, rng),
                   T64::uniform({1, 3}, rng)});
    lams.push_back(T64::uniform({1, 3}, rng, -1.2, 1.2));
  }
  LightState<double> state;
  T64 chained;
  for (int i = 0; i < 3; ++i) {
    chained = rla_light_step(state, rnd[i]);
    if (i + 1 < 3) state = {chained, lams[i + 1]};
  }
  CHECK(max_abs_diff(chained, rla_light_unrolled(rnd, lams)) < 1e-12);

  CHECK_THROWS_AS(rla_light_unrolled(rnd, {T64::ones({1, 3})}), shape_error);
}

TEST_CASE("multi_head: H=1 identity, partition round-trip, block-diagonal independence") {
  Rng rng(41);
  std::vector<LayerTriple<double>> trs;
  for (int i = 0; i < 3; ++i) {
    trs.push_back({T64::uniform({1, 4}, rng), T64::uniform({1, 4}, rng),
                   T64::uniform({1, 6}, rng)});
  }
  CHECK(max_abs_diff(multi_head_direct(trs, {1, 4}), mla_direct(trs)) == 0.0);

  // H=2, D=Dk=2: per-head scalars match two independent D=1 runs
  std::vector<LayerTriple<double>> pair;
  std::vector<LayerTriple<double>> head0, head1;
  Rng r2(43);
  for (int i = 0; i < 2; ++i) {
    const double q0 = r2.uniform<double>(-1, 1), q1 = r2.uniform<double>(-1, 1);
    const double k0 = r2.uniform<double>(-1, 1), k1 = r2.uniform<double>(-1, 1);
    const double v0 = r2.uniform<double>(-1, 1), v1 = r2.uniform<double>(-1, 1);
    pair.push_back({T64::from_data({1, 2}, {q0, q1}), T64::from_data({1, 2}, {k0, k1}),
                    T64::from_data({1, 2}, {v0, v1})});
    head0.push_back(scalar_triple(q0, k0, v0));
    head1.push_back(scalar_triple(q1, k1, v1));
  }
  T64 mh = multi_head_direct(pair, {2, 1});
  CHECK(mh(0, 0) == doctest::Approx(mla_direct(head0).item()).epsilon(1e-12));
  CHECK(mh(0, 1) == doctest::Approx(mla_direct(head1).item()).epsilon(1e-12));

  CHECK_THROWS_AS(multi_head_direct(trs, HeadConfig{3, 1}), config_error);
}

TEST_CASE("kernel attention: first step, hand recurrence, normalization, degeneracy") {
  KernelState<double> empty;
  Rng rng(53);
  LayerTriple<double> tr{T64::uniform({1, 3}, rng), T64::uniform({1, 3}, rng),
                         T64::uniform({1, 4}, rng)};
  for (KernelPhi phi : {KernelPhi::Identity, KernelPhi::EluPlusOne}) {
    auto [o, st] = kernel_rla_step(empty, tr, phi);
    CHECK(max_abs_diff(o, tr.v) < 1e-12);  // numerator and denominator share the score
  }

  // phi = identity, steps (1,2,3) then (1,1,5): U=11, Z=3, O=11/3
  auto [o1, s1] = kernel_rla_step(empty, scalar_triple(1, 2, 3), KernelPhi::Identity);
  auto [o2, s2] = kernel_rla_step(s1, scalar_triple(1, 1, 5), KernelPhi::Identity);
  CHECK(s2.U.item() == doctest::Approx(11.0));
  CHECK(s2.Z.item() == doctest::Approx(3.0));
  CHECK(o2.item() == doctest::Approx(11.0 / 3.0));

  // direct form is the oracle for the recurrence
  std::vector<LayerTriple<double>> steps{scalar_triple(1, 2, 3), scalar_triple(1, 1, 5)};
  CHECK(max_abs_diff(o2, kernel_rla_direct(steps, KernelPhi::Identity)) < 1e-12);

  // elu-plus-one weights: normalized even for a zero query
  std::vector<LayerTriple<double>> zq{scalar_triple(0, 2, 3), scalar_triple(0, -1, 5)};
  auto weights = kernel_attention_weights(zq, KernelPhi::EluPlusOne);
  double total = 0.0;
  for (double w : weights) {
    CHECK(w > 0.0);
    total += w;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);

  // identity phi with a zero score hits the degeneracy guard
  CHECK_THROWS_AS(
      kernel_rla_step(empty, scalar_triple(0, 1, 1), KernelPhi::Identity),
      numeric_error);

  // all keys identical: the weighted mean collapses to the plain mean
  Rng mr(59);
  T64 shared_k = T64::uniform({1, 3}, mr);
  std::vector<LayerTriple<double>> same_keys;
  for (int i = 0; i < 4; ++i) {
    same_keys.push_back({T64::uniform({1, 3}, mr), shared_k, T64::uniform({1, 2}, mr)});
  }
  T64 mean = T64::zeros({1, 2});
  for (const auto& trp : same_keys) mean = add(mean, scale(trp.v, 0.25));
  CHECK(max_abs_diff(kernel_rla_direct(same_keys, KernelPhi::EluPlusOne), mean) < 1e-12);
}

TEST_SUITE_END();
