#include <doctest.h>

#include <cmath>

#include "mrla/verify.hpp"

using namespace mrla;
using T64 = Tensor<double>;

TEST_SUITE_BEGIN("verify");

TEST_CASE("equivalence suites pass on the default grid") {
  auto reports = verify::equivalence_suite(4242, 12);
  for (const auto& rep : reports) {
    INFO(rep.suite, " worst_err=", rep.worst_err);
    CHECK(rep.pass());
    CHECK(rep.cases >= 12);
  }
}

TEST_CASE("a T=1-only grid trivially passes every family") {
  verify::GridLimits tiny{1, 8, 4};
  CHECK(verify::base_vs_direct_suite(1, 8, tiny).pass());
  CHECK(verify::unroll_vs_recur_suite(1, 8, tiny).pass());
  CHECK(verify::light_vs_base_proportional_suite(1, 8, tiny).pass());
  CHECK(verify::light_vs_base_head_per_channel_suite(1, 8, tiny).pass());
  CHECK(verify::kernel_step_vs_direct_suite(1, 8, tiny).pass());
}

TEST_CASE("fault injection: perturbing one carry vector breaks the equivalence") {
  // T=2, scalar case: base output = q2*(k1 q2... ) vs light with lambda = c.
  const double q1 = 0.8, k1 = 0.6, v1 = 1.1, q2c = 1.3, k2 = -0.4, v2 = 0.7;
  LayerTriple<double> t1{T64::from_data({1, 1}, {q1}), T64::from_data({1, 1}, {k1}),
                         T64::from_data({1, 1}, {v1})};
  LayerTriple<double> t2{T64::from_data({1, 1}, {q2c * q1}), T64::from_data({1, 1}, {k2}),
                         T64::from_data({1, 1}, {v2})};
  RecurrentKV<double> kv;
  auto [o1, kv1] = rla_base_step(kv, t1);
  auto [base2, kv2] = rla_base_step(kv1, t2);

  LightState<double> exact{o1, T64::from_data({1, 1}, {q2c})};
  CHECK(max_abs_diff(rla_light_step(exact, t2), base2) < 1e-12);

  LightState<double> faulty{o1, T64::from_data({1, 1}, {q2c + 1e-3})};
  const double err = max_abs_diff(rla_light_step(faulty, t2), base2);
  CHECK(err > 1e-6);                                     // tolerance is exceeded
  CHECK(err == doctest::Approx(1e-3 * std::abs(o1.item())).epsilon(1e-6));
}

TEST_CASE("gradient suites pass with a single seed") {
  auto reports = verify::gradient_suite(910, 1);
  for (const auto& rep : reports) {
    INFO(rep.suite, " worst_err=", rep.worst_err);
    CHECK(rep.pass());
  }
}

TEST_CASE("complexity suite: closed forms and instrumented counts") {
  auto reports = verify::complexity_suite();
  for (const auto& rep : reports) {
    INFO(rep.suite);
    CHECK(rep.pass());
  }
}

TEST_CASE("complexity probe: exact counts, independent of timing noise") {
  auto base = verify::complexity_probe(verify::BenchMode::Base, {4, 8});
  REQUIRE(base.size() == 2);
  CHECK(base[0].score_evals == 10);
  CHECK(base[1].score_evals == 36);
  CHECK(base[1].ratio == doctest::Approx(3.6));

  auto light = verify::complexity_probe(verify::BenchMode::Light, {4, 8, 16});
  CHECK(light[1].ratio == doctest::Approx(2.0));
  CHECK(light[2].ratio == doctest::Approx(2.0));
  CHECK(light[0].wall_ms > 0.0);
}

TEST_CASE("abs_cosine: collinear, orthogonal, closed form, zero norm") {
  const double a[2] = {1.0, 1.0}, b[2] = {2.0, 2.0}, c[2] = {1.0, 0.0}, z[2] = {0.0, 0.0};
  CHECK(verify::abs_cosine<double>({b, 2}, {a, 2}) == doctest::Approx(1.0));
  const double d[2] = {0.0, 3.0};
  CHECK(verify::abs_cosine<double>({c, 2}, {d, 2}) == doctest::Approx(0.0));
  CHECK(verify::abs_cosine<double>({a, 2}, {c, 2}) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(verify::abs_cosine<double>({a, 2}, {z, 2}) < 0.0);
}

TEST_CASE("query_cosine_stats: bins fill, zero queries are skipped and counted") {
  ArchSpec arch{BlockVariant::Cnn, {{3, 8, 4, 4}}, 4};
  auto model = build_model<float>(arch, ModelMode::Light, 3, 2, 2);
  auto ds = synth_dataset<float>(2, 2, {4, 4, 2}, 8);
  auto stats = verify::query_cosine_stats(model, ds);
  std::size_t total = 0;
  for (auto c : stats.bin_counts) total += c;
  CHECK(total == stats.cases);
  // 3 blocks -> 2 consecutive pairs, 2 heads, 4 samples
  CHECK(stats.cases + stats.skipped == 16);

  for (auto& st : model.attn) {
    for (auto& b : st) b.conv_q.node()->value.setZero();
  }
  auto zeroed = verify::query_cosine_stats(model, ds);
  CHECK(zeroed.cases == 0);
  CHECK(zeroed.skipped == 16);

  auto off = build_model<float>(arch, ModelMode::Off, 3, 2, 2);
  CHECK_THROWS_AS(verify::query_cosine_stats(off, ds), config_error);
}

TEST_CASE("attn_score_matrix: triangular fill, sigmoid range, zero-query value") {
  ArchSpec arch{BlockVariant::Cnn, {{4, 8, 4, 4}}, 4};
  auto model = build_model<float>(arch, ModelMode::Base, 31, 2, 2);
  Rng rng(6);
  auto x = Tensor<float>::uniform({4, 4, 2}, rng);
  auto result = verify::attn_score_matrix(model, 0, x);
  CHECK(result.depth == 4);
  CHECK(result.heads == 2);
  CHECK(result.entries.size() == result.heads * (4 * 5 / 2));

  std::size_t row1 = 0;
  for (const auto& e : result.entries) {
    CHECK(e.s <= e.t);
    CHECK(e.value > 0.0);
    CHECK(e.value < 1.0);
    if (e.t == 1) ++row1;
  }
  CHECK(row1 == result.heads);  // the first layer attends only to itself

  for (auto& st : model.attn) {
    for (auto& b : st) b.conv_q.node()->value.setZero();
  }
  auto zeroed = verify::attn_score_matrix(model, 0, x);
  for (const auto& e : zeroed.entries) CHECK(e.value == doctest::Approx(0.5));

  CHECK_THROWS_AS(verify::attn_score_matrix(model, 3, x), config_error);

  // light mode: diagonal entries plus carry weights
  auto light = build_model<float>(arch, ModelMode::Light, 31, 2, 2);
  auto lr = verify::attn_score_matrix(light, 0, x);
  CHECK(lr.entries.size() == lr.heads * 4);
  for (const auto& e : lr.entries) CHECK(e.s == e.t);
  CHECK(lr.carry_weights.size() == lr.heads * (3 * 4 / 2));
}

TEST_SUITE_END();
