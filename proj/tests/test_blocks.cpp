#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mrla/blocks.hpp"
#include "mrla/counts.hpp"
#include "mrla/models.hpp"

using namespace mrla;
using T64 = Tensor<double>;

TEST_SUITE_BEGIN("blocks");

TEST_CASE("eca_kernel_size: spec points, tie-down cases, minimum") {
  CHECK(eca_kernel_size(64) == 3);    // 3.5 -> nearest odd below the midpoint
  CHECK(eca_kernel_size(256) == 5);   // 4.5 -> 5
  CHECK(eca_kernel_size(2) == 1);     // 1.0 -> 1
  CHECK(eca_kernel_size(8) == 1);     // 2.0 ties between 1 and 3 -> down
  CHECK(eca_kernel_size(512) == 5);   // 5.0 exactly odd
  CHECK(eca_kernel_size(1024) == 5);  // 5.5 -> 5
  CHECK(eca_kernel_size(2048) == 5);  // 6.0 ties between 5 and 7 -> down
  CHECK(eca_kernel_size(1) == 1);     // clamped
  CHECK(eca_kernel_size(1u << 14) == 7);
}

TEST_CASE("block_param_count: formula points and the ResNet-50 shape") {
  CHECK(block_param_count(64, 3, MrlaMode::Light) == 646);  // 576 + 64 + 6
  CHECK(block_param_count(1, 1, MrlaMode::Base) == 11);     // 9 + 2

  const auto total = arch_param_count(resnet50_shape(), MrlaMode::Light);
  CHECK(total == 151200);  // sum over 3/4/6/3 blocks of 9C + C + 2k
  CHECK(total >= 140000);
  CHECK(total <= 180000);
}

TEST_CASE("block_param_count equals enumeration of allocated tensors") {
  Rng rng(9);
  for (auto [c, dk] : {std::pair<std::size_t, std::size_t>{8, 4}, {16, 16}, {32, 8}}) {
    for (MrlaMode mode : {MrlaMode::Base, MrlaMode::Light}) {
      auto p = MrlaBlockParams<double>::init(c, dk, mode, BlockVariant::Cnn, rng);
      CHECK(p.learnable_count() == block_param_count(c, eca_kernel_size(c), mode));
    }
  }
  // whole-architecture enumeration: exact integer match
  ArchSpec arch{BlockVariant::Cnn, {{3, 8, 8, 8}, {2, 16, 4, 4}}, 8};
  for (ModelMode mm : {ModelMode::Base, ModelMode::Light}) {
    auto model = build_model<double>(arch, mm, 4, 3, 3);
    const MrlaMode bm = mm == ModelMode::Base ? MrlaMode::Base : MrlaMode::Light;
    CHECK(model.attn_param_count() == arch_param_count(arch, bm));
  }
}

TEST_CASE("block_cost_count: triangular vs linear growth") {
  const BlockShape shape{4, 5, 5, 4};  // D = 100
  std::uint64_t base_cum = 0, light_cum = 0;
  for (std::size_t t = 1; t <= 4; ++t) {
    base_cum += block_cost_count(shape, MrlaMode::Base, t).score_evals;
    light_cum += block_cost_count(shape, MrlaMode::Light, t).score_evals;
  }
  CHECK(base_cum == 10);
  CHECK(light_cum == 4);

  // value-store contrast at t = 10: base carries exactly 10x the light state
  const auto base_state = block_cost_count(shape, MrlaMode::Base, 10).state_values;
  const auto light_state = block_cost_count(shape, MrlaMode::Light, 10).state_values;
  CHECK(static_cast<double>(base_state) / static_cast<double>(light_state) ==
        doctest::Approx(10.0));

  // doubling the stage depth: light doubles exactly, base grows by 3.6 at T=4
  std::uint64_t base8 = 0, light8 = 0;
  for (std::size_t t = 1; t <= 8; ++t) {
    base8 += block_cost_count(shape, MrlaMode::Base, t).score_evals;
    light8 += block_cost_count(shape, MrlaMode::Light, t).score_evals;
  }
  CHECK(static_cast<double>(light8) / static_cast<double>(light_cum) == 2.0);
  CHECK(static_cast<double>(base8) / static_cast<double>(base_cum) == doctest::Approx(3.6));
}

TEST_CASE("block forward: shape preservation for both variants and modes") {
  Rng rng(15);
  for (BlockVariant variant : {BlockVariant::Cnn, BlockVariant::Vit}) {
    for (MrlaMode mode : {MrlaMode::Base, MrlaMode::Light}) {
      auto p = MrlaBlockParams<double>::init(4, 2, mode, variant, rng);
      const Shape xshape =
          variant == BlockVariant::Cnn ? Shape{3, 4, 4} : Shape{10, 4};  // 9 patches + class
      T64 x = T64::uniform(xshape, rng);
      BlockCarry<double> carry;
      auto [o1, c1] = mrla_block_forward(p, x, carry);
      CHECK(o1.shape() == xshape);
      auto [o2, c2] = mrla_block_forward(p, o1, c1);
      CHECK(o2.shape() == xshape);
      CHECK(c2.t == 2);
    }
  }
}

TEST_CASE("vit class token passes through bit-identically") {
  Rng rng(19);
  auto p = MrlaBlockParams<double>::init(6, 3, MrlaMode::Light, BlockVariant::Vit, rng);
  T64 x = T64::uniform({5, 6}, rng);  // 4 patches + class token
  BlockCarry<double> carry;
  auto [o, c1] = mrla_block_forward(p, x, carry);
  CHECK(std::memcmp(o.data().data(), x.data().data(), 6 * sizeof(double)) == 0);
  auto [o2, c2] = mrla_block_forward(p, o, c1);
  CHECK(std::memcmp(o2.data().data(), o.data().data(), 6 * sizeof(double)) == 0);
}

TEST_CASE("zero query kernel: first block output is 0.5 * DWConv(x)") {
  Rng rng(21);
  auto p = MrlaBlockParams<double>::init(4, 2, MrlaMode::Light, BlockVariant::Cnn, rng);
  p.conv_q = T64::zeros(p.conv_q.shape());
  T64 x = T64::uniform({3, 3, 4}, rng);
  BlockCarry<double> carry;
  auto [o, c1] = mrla_block_forward(p, x, carry);
  T64 expected = scale(dwconv3x3_same(x, p.w_v), 0.5);
  CHECK(max_abs_diff(o, expected) < 1e-12);
}

TEST_CASE("block forward: carry and dimension contract errors") {
  Rng rng(27);
  auto light = MrlaBlockParams<double>::init(4, 2, MrlaMode::Light, BlockVariant::Cnn, rng);
  auto base = MrlaBlockParams<double>::init(4, 2, MrlaMode::Base, BlockVariant::Cnn, rng);
  T64 x = T64::uniform({2, 2, 4}, rng);
  BlockCarry<double> carry;
  auto [o, lc] = mrla_block_forward(light, x, carry);

  CHECK_THROWS_AS(mrla_block_forward(base, x, lc), contract_error);  // carry/mode mismatch

  T64 wrong_c = T64::uniform({2, 2, 6}, rng);
  CHECK_THROWS_AS(mrla_block_forward(light, wrong_c, carry), shape_error);

  T64 bigger = T64::uniform({4, 4, 4}, rng);
  CHECK_THROWS_AS(mrla_block_forward(light, bigger, lc), shape_error);  // stage mismatch

  auto vit = MrlaBlockParams<double>::init(4, 2, MrlaMode::Light, BlockVariant::Vit, rng);
  T64 nonsq = T64::uniform({6, 4}, rng);  // 5 patches: not a perfect square
  CHECK_THROWS_AS(mrla_block_forward(vit, nonsq, carry), shape_error);
}

TEST_SUITE_END();
