#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mrla/arch.hpp"
#include "mrla/attention.hpp"
#include "mrla/counts.hpp"
#include "mrla/errors.hpp"
#include "mrla/rng.hpp"
#include "mrla/tensor.hpp"

// Deployable attention blocks: GAP summarizer, adaptive 1-D conv query/key
// paths, 3x3 depthwise value path, per-head sigmoid scores, and the carry
// wiring for both the base (stacked key/value) and light (weighted previous
// output) modes, with CNN and ViT adapters.

namespace mrla {

// One block's learnable set. Query and key kernels are separate; the value
// path has no bias; lambda_o exists only in light mode and has length C.
template <class S>
struct MrlaBlockParams {
  Tensor<S> conv_q;    // {k}
  Tensor<S> conv_k;    // {k}
  Tensor<S> w_v;       // {3,3,C}
  Tensor<S> lambda_o;  // {C}, light mode only
  HeadConfig cfg;      // heads * dk == C
  MrlaMode mode = MrlaMode::Light;
  BlockVariant variant = BlockVariant::Cnn;

  std::size_t channels() const { return w_v.shape()[2]; }

  void validate() const {
    const std::size_t c = channels();
    if (cfg.heads * cfg.dk != c) {
      throw config_error("MrlaBlockParams: " + std::to_string(cfg.heads) + " heads x " +
                         std::to_string(cfg.dk) + " channels do not partition C=" +
                         std::to_string(c));
    }
    if (conv_q.shape() != conv_k.shape()) {
      throw shape_error("MrlaBlockParams: conv_q " + shape_str(conv_q.shape()) +
                        " and conv_k " + shape_str(conv_k.shape()) + " differ");
    }
    if (mode == MrlaMode::Light) {
      if (!lambda_o.valid() || lambda_o.shape() != Shape{c}) {
        throw config_error("MrlaBlockParams: light mode needs a length-" + std::to_string(c) +
                           " lambda_o");
      }
    } else if (lambda_o.valid()) {
      throw config_error("MrlaBlockParams: base mode must not carry lambda_o");
    }
  }

  static MrlaBlockParams init(std::size_t c, std::size_t dk, MrlaMode mode,
                              BlockVariant variant, Rng& rng) {
    if (dk == 0 || c % dk != 0) {
      throw config_error("MrlaBlockParams: d_k " + std::to_string(dk) +
                         " does not divide C=" + std::to_string(c));
    }
    MrlaBlockParams p;
    const std::size_t k = eca_kernel_size(c);
    const S kb = static_cast<S>(1.0 / std::sqrt(static_cast<double>(k)));
    p.conv_q = Tensor<S>::uniform({k}, rng, -kb, kb, true);
    p.conv_k = Tensor<S>::uniform({k}, rng, -kb, kb, true);
    p.w_v = Tensor<S>::uniform({3, 3, c}, rng, S(-1) / S(3), S(1) / S(3), true);
    if (mode == MrlaMode::Light) p.lambda_o = Tensor<S>::ones({c}, true);
    p.cfg = HeadConfig{c / dk, dk};
    p.mode = mode;
    p.variant = variant;
    return p;
  }

  std::vector<Tensor<S>> learnables() const {
    std::vector<Tensor<S>> out{conv_q, conv_k, w_v};
    if (lambda_o.valid()) out.push_back(lambda_o);
    return out;
  }

  std::uint64_t learnable_count() const {
    std::uint64_t n = 0;
    for (const auto& t : learnables()) n += t.size();
    return n;
  }
};

// Per-stage recurrent state. Base mode stacks one key row (length C) and one
// flattened value row (length spatial*C) per layer; light mode keeps the
// previous structured output map. Created empty at stage entry.
template <class S>
struct BlockCarry {
  RecurrentKV<S> kv;  // base
  Tensor<S> o_prev;   // light: {H,W,C} map (cnn) or {n,n,C} patch map (vit)
  std::size_t t = 0;

  bool empty() const { return t == 0; }
};

// Optional forward instrumentation: sigmoid scores per attended layer and
// head, the pooled query, and the evaluated query-key pair count.
template <class S>
struct BlockTrace {
  std::vector<std::vector<S>> scores;  // scores[s][h], s over attended layers
  std::vector<S> query;                // pooled query, length C
  std::size_t score_evals = 0;
};

// Head-sliced sigmoid-scored attention over stacked keys K {t,C} and
// flattened values V {t, spatial*C}; returns the {spatial, C} output map.
template <class S>
Tensor<S> sigmoid_scored_attention(const Tensor<S>& q_row, const Tensor<S>& K,
                                   const Tensor<S>& V, std::size_t spatial,
                                   const HeadConfig& cfg, BlockTrace<S>* trace = nullptr) {
  const std::size_t t = K.shape()[0];
  const std::size_t c = K.shape()[1];
  std::vector<Tensor<S>> q_heads = split_heads(q_row, cfg.heads);
  Tensor<S> out;
  for (std::size_t s = 0; s < t; ++s) {
    Tensor<S> k_row = slice_rows(K, s, 1);
    Tensor<S> v_struct = reshape(slice_rows(V, s, 1), {spatial, c});
    std::vector<Tensor<S>> weighted;
    std::vector<S> score_row;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Tensor<S> k_h = slice_last(k_row, h * cfg.dk, cfg.dk);
      Tensor<S> w = sigmoid(matmul(q_heads[h], transpose(k_h)));
      weighted.push_back(
          mul_by_scalar_tensor(slice_last(v_struct, h * cfg.dk, cfg.dk), w));
      if (trace) score_row.push_back(w.item());
    }
    Tensor<S> term = concat_last(weighted);
    out = out.valid() ? add(out, term) : term;
    if (trace) trace->scores.push_back(std::move(score_row));
  }
  if (trace) trace->score_evals += t;
  return out;
}

namespace detail {

template <class S>
void check_block_carry(const MrlaBlockParams<S>& p, const BlockCarry<S>& carry,
                       std::size_t spatial) {
  if (carry.empty()) return;
  const std::size_t c = p.channels();
  if (p.mode == MrlaMode::Base) {
    if (carry.kv.empty() || carry.o_prev.valid()) {
      throw contract_error("mrla_block_forward: carry does not match base mode");
    }
    if (carry.kv.K.shape()[1] != c || carry.kv.V.shape()[1] != spatial * c) {
      throw shape_error("mrla_block_forward: stage-channel mismatch, carry K " +
                        shape_str(carry.kv.K.shape()) + ", V " +
                        shape_str(carry.kv.V.shape()) + " vs C=" + std::to_string(c) +
                        ", spatial=" + std::to_string(spatial));
    }
  } else {
    if (!carry.o_prev.valid() || !carry.kv.empty()) {
      throw contract_error("mrla_block_forward: carry does not match light mode");
    }
    if (carry.o_prev.size() != spatial * c) {
      throw shape_error("mrla_block_forward: stage-channel mismatch, carry output " +
                        shape_str(carry.o_prev.shape()) + " vs C=" + std::to_string(c) +
                        ", spatial=" + std::to_string(spatial));
    }
  }
}

// Shared core on a structured {..., C} map with `spatial` leading positions.
// Returns the {spatial, C} output and the updated carry.
template <class S>
std::pair<Tensor<S>, BlockCarry<S>> block_attend(const MrlaBlockParams<S>& p,
                                                 const Tensor<S>& pooled,
                                                 const Tensor<S>& v_map,
                                                 std::size_t spatial,
                                                 const BlockCarry<S>& carry,
                                                 BlockTrace<S>* trace) {
  const std::size_t c = p.channels();
  Tensor<S> q = conv1d_same(pooled, p.conv_q);
  Tensor<S> k = conv1d_same(pooled, p.conv_k);
  Tensor<S> q_row = reshape(q, {1, c});
  Tensor<S> k_row = reshape(k, {1, c});
  Tensor<S> v_flat = reshape(v_map, {1, spatial * c});
  if (trace) trace->query.assign(q.data().begin(), q.data().end());

  BlockCarry<S> next;
  next.t = carry.t + 1;
  Tensor<S> out;
  if (p.mode == MrlaMode::Base) {
    next.kv.K = carry.empty() ? k_row : concat_rows(carry.kv.K, k_row);
    next.kv.V = carry.empty() ? v_flat : concat_rows(carry.kv.V, v_flat);
    out = sigmoid_scored_attention(q_row, next.kv.K, next.kv.V, spatial, p.cfg, trace);
  } else {
    out = sigmoid_scored_attention(q_row, k_row, v_flat, spatial, p.cfg, trace);
    if (!carry.empty()) {
      Tensor<S> lam = expand_channels(p.lambda_o, {spatial});
      out = add(out, mul(lam, reshape(carry.o_prev, {spatial, c})));
    }
  }
  return {out, std::move(next)};
}

}  // namespace detail

// Forward pass of one block. CNN variant takes an HxWxC map; ViT variant an
// (N+1)xC token matrix whose class token passes through untouched. Output
// shape equals input shape; the returned carry feeds the next block of the
// same stage.
template <class S>
std::pair<Tensor<S>, BlockCarry<S>> mrla_block_forward(const MrlaBlockParams<S>& p,
                                                       const Tensor<S>& x,
                                                       const BlockCarry<S>& carry,
                                                       BlockTrace<S>* trace = nullptr) {
  p.validate();
  const std::size_t c = p.channels();

  if (p.variant == BlockVariant::Cnn) {
    if (x.rank() != 3 || x.shape()[2] != c) {
      throw shape_error("mrla_block_forward: stage-channel mismatch, input " +
                        shape_str(x.shape()) + " vs C=" + std::to_string(c));
    }
    const std::size_t spatial = x.shape()[0] * x.shape()[1];
    detail::check_block_carry(p, carry, spatial);
    Tensor<S> pooled = gap(x);
    Tensor<S> v_map = dwconv3x3_same(x, p.w_v);
    auto [out, next] = detail::block_attend(p, pooled, v_map, spatial, carry, trace);
    Tensor<S> o = reshape(out, x.shape());
    if (p.mode == MrlaMode::Light) next.o_prev = o;
    return {o, std::move(next)};
  }

  // ViT variant: split class/patch tokens, run attention on the patch grid.
  if (x.rank() != 2 || x.shape()[1] != c || x.shape()[0] < 2) {
    throw shape_error("mrla_block_forward: expected (N+1)xC tokens, got " +
                      shape_str(x.shape()));
  }
  const std::size_t n_patches = x.shape()[0] - 1;
  const auto side = static_cast<std::size_t>(std::llround(
      std::sqrt(static_cast<double>(n_patches))));
  if (side * side != n_patches) {
    throw shape_error("mrla_block_forward: patch count " + std::to_string(n_patches) +
                      " is not a perfect square");
  }
  detail::check_block_carry(p, carry, n_patches);
  Tensor<S> cls = slice_rows(x, 0, 1);
  Tensor<S> pmap = reshape(slice_rows(x, 1, n_patches), {side, side, c});
  Tensor<S> pooled = gap(pmap);
  Tensor<S> v_map = dwconv3x3_same(pmap, p.w_v);
  if (p.mode == MrlaMode::Light) v_map = gelu(v_map);
  auto [out, next] = detail::block_attend(p, pooled, v_map, n_patches, carry, trace);
  if (p.mode == MrlaMode::Light) next.o_prev = reshape(out, {side, side, c});
  return {concat_rows(cls, out), std::move(next)};
}

}  // namespace mrla
