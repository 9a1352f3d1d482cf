#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mrla/errors.hpp"
#include "mrla/tensor.hpp"

// Layer attention in linear-score mode: the direct form, the recurrent base
// form, the light-weighted form (both equalities), their multi-head wrappers,
// and the kernel-linearized variant. Score nonlinearities live with the block
// designs, not here, so the algebraic equivalences hold exactly.

namespace mrla {

// One layer's query/key/value rows: q,k are 1xDk, v is 1xD.
template <class S>
struct LayerTriple {
  Tensor<S> q;
  Tensor<S> k;
  Tensor<S> v;

  std::size_t dk() const { return q.shape()[1]; }
  std::size_t d() const { return v.shape()[1]; }

  void validate() const {
    if (q.rank() != 2 || q.shape()[0] != 1 || k.rank() != 2 || k.shape()[0] != 1 ||
        v.rank() != 2 || v.shape()[0] != 1) {
      throw shape_error("LayerTriple: q, k, v must be single rows");
    }
    if (q.shape()[1] != k.shape()[1]) {
      throw shape_error("LayerTriple: q " + shape_str(q.shape()) + " and k " +
                        shape_str(k.shape()) + " disagree on Dk");
    }
  }
};

// Stacked keys (t x Dk) and values (t x D); grows one row per step.
template <class S>
struct RecurrentKV {
  Tensor<S> K;
  Tensor<S> V;

  bool empty() const { return !K.valid(); }
  std::size_t t() const { return empty() ? 0 : K.shape()[0]; }
};

// Previous output plus the carry vector applied at the upcoming step.
template <class S>
struct LightState {
  Tensor<S> o_prev;    // 1xD
  Tensor<S> lambda_o;  // 1xD

  bool empty() const { return !o_prev.valid(); }
};

struct HeadConfig {
  std::size_t heads = 1;
  std::size_t dk = 0;  // channels per head in query/key space
};

// Running sums of the kernel-linearized recurrence: U is Dk x D, Z is Dk x 1.
template <class S>
struct KernelState {
  Tensor<S> U;
  Tensor<S> Z;

  bool empty() const { return !U.valid(); }
};

enum class KernelPhi { Identity, EluPlusOne };

namespace detail {

template <class S>
Tensor<S> apply_phi(const Tensor<S>& x, KernelPhi phi) {
  return phi == KernelPhi::Identity ? x : elu_plus_one(x);
}

// Scalar attention score q k^T as a 1x1 tensor.
template <class S>
Tensor<S> score(const Tensor<S>& q, const Tensor<S>& k) {
  return matmul(q, transpose(k));
}

inline void check_head_config(const HeadConfig& cfg, std::size_t dk_total,
                              std::size_t d_total) {
  if (cfg.heads < 1 || cfg.heads * cfg.dk != dk_total || d_total % cfg.heads != 0) {
    throw config_error("head config (" + std::to_string(cfg.heads) + " heads x " +
                       std::to_string(cfg.dk) + " channels) does not partition Dk=" +
                       std::to_string(dk_total) + ", D=" + std::to_string(d_total));
  }
}

}  // namespace detail

// Reference softmax self-attention with scale 1/sqrt(Dk).
template <class S>
Tensor<S> self_attention_ref(const Tensor<S>& x, const Tensor<S>& wq, const Tensor<S>& wk,
                             const Tensor<S>& wv) {
  Tensor<S> q = matmul(x, wq);
  Tensor<S> k = matmul(x, wk);
  Tensor<S> v = matmul(x, wv);
  const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(q.shape()[1])));
  Tensor<S> logits = scale(matmul(q, transpose(k)), inv_scale);
  return matmul(softmax_rows(logits), v);
}

// Direct layer attention with the last layer as the query:
// O = sum_s (Q K_s^T) V_s over every stored layer.
template <class S>
Tensor<S> mla_direct(const std::vector<LayerTriple<S>>& triples) {
  if (triples.empty()) throw contract_error("mla_direct: empty layer list");
  for (const auto& tr : triples) tr.validate();
  const Tensor<S>& q = triples.back().q;
  Tensor<S> out;
  for (const auto& tr : triples) {
    Tensor<S> term = mul_by_scalar_tensor(tr.v, detail::score(q, tr.k));
    out = out.valid() ? add(out, term) : term;
  }
  return out;
}

template <class S>
Tensor<S> mla_direct(const std::vector<LayerTriple<S>>& triples, std::size_t t) {
  if (t != triples.size()) {
    throw contract_error("mla_direct: query layer " + std::to_string(t) + " must equal " +
                         std::to_string(triples.size()) + " stored layers");
  }
  return mla_direct(triples);
}

// One recurrent step of the base form:
// O = Q (K_prev)^T V_prev + (Q k^T) v, state gains the (k, v) row.
template <class S>
std::pair<Tensor<S>, RecurrentKV<S>> rla_base_step(const RecurrentKV<S>& state,
                                                   const LayerTriple<S>& triple) {
  triple.validate();
  Tensor<S> own = mul_by_scalar_tensor(triple.v, detail::score(triple.q, triple.k));
  RecurrentKV<S> next;
  if (state.empty()) {
    next.K = triple.k;
    next.V = triple.v;
    return {own, next};
  }
  if (state.K.shape()[1] != triple.dk() || state.V.shape()[1] != triple.d()) {
    throw shape_error("rla_base_step: triple (Dk=" + std::to_string(triple.dk()) +
                      ", D=" + std::to_string(triple.d()) + ") does not match state K " +
                      shape_str(state.K.shape()) + ", V " + shape_str(state.V.shape()));
  }
  Tensor<S> history = matmul(matmul(triple.q, transpose(state.K)), state.V);
  next.K = concat_rows(state.K, triple.k);
  next.V = concat_rows(state.V, triple.v);
  return {add(history, own), next};
}

// One step of the light form: O = lambda ⊙ O_prev + (Q k^T) v.
// An empty state means O_prev = 0 (the first layer attends only to itself).
template <class S>
Tensor<S> rla_light_step(const LightState<S>& state, const LayerTriple<S>& triple) {
  triple.validate();
  Tensor<S> own = mul_by_scalar_tensor(triple.v, detail::score(triple.q, triple.k));
  if (state.empty()) return own;
  detail::check_same_shape(state.o_prev, triple.v, "rla_light_step");
  return add(mul(state.lambda_o, state.o_prev), own);
}

// Unrolled light form: O = sum_l beta_l ⊙ [Q^{t-l} (k^{t-l})^T v^{t-l}] with
// beta_0 = 1 and beta_l the running product of the most recent carries.
// lambdas[i] belongs to step i+1; the entry for step 1 is unused.
template <class S>
Tensor<S> rla_light_unrolled(const std::vector<LayerTriple<S>>& triples,
                             const std::vector<Tensor<S>>& lambdas) {
  if (triples.empty()) throw contract_error("rla_light_unrolled: empty layer list");
  if (lambdas.size() != triples.size()) {
    throw shape_error("rla_light_unrolled: " + std::to_string(triples.size()) +
                      " layers but " + std::to_string(lambdas.size()) + " carry vectors");
  }
  const std::size_t t = triples.size();
  auto own_term = [&](std::size_t step) {  // step is 1-based
    const auto& tr = triples[step - 1];
    tr.validate();
    return mul_by_scalar_tensor(tr.v, detail::score(tr.q, tr.k));
  };
  Tensor<S> out = own_term(t);
  Tensor<S> beta;  // running product, lazily started at lambda^t
  for (std::size_t l = 1; l < t; ++l) {
    const Tensor<S>& lam = lambdas[t - l];  // lambda for step t-l+1
    beta = beta.valid() ? mul(beta, lam) : lam;
    out = add(out, mul(beta, own_term(t - l)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-head wrappers: contiguous channel slices per head, outputs rejoined
// by concatenation.
// ---------------------------------------------------------------------------

template <class S>
std::vector<Tensor<S>> split_heads(const Tensor<S>& row, std::size_t heads) {
  const std::size_t width = row.shape().back() / heads;
  std::vector<Tensor<S>> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) parts.push_back(slice_last(row, h * width, width));
  return parts;
}

template <class S>
Tensor<S> merge_heads(const std::vector<Tensor<S>>& parts) {
  return concat_last(parts);
}

template <class S>
Tensor<S> multi_head_direct(const std::vector<LayerTriple<S>>& triples, const HeadConfig& cfg) {
  if (triples.empty()) throw contract_error("multi_head_direct: empty layer list");
  detail::check_head_config(cfg, triples.back().dk(), triples.back().d());
  std::vector<Tensor<S>> outs;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    std::vector<LayerTriple<S>> head;
    head.reserve(triples.size());
    for (const auto& tr : triples) {
      head.push_back({slice_last(tr.q, h * cfg.dk, cfg.dk),
                      slice_last(tr.k, h * cfg.dk, cfg.dk),
                      slice_last(tr.v, h * (tr.d() / cfg.heads), tr.d() / cfg.heads)});
    }
    outs.push_back(mla_direct(head));
  }
  return merge_heads(outs);
}

template <class S>
std::pair<Tensor<S>, RecurrentKV<S>> multi_head_base_step(const RecurrentKV<S>& state,
                                                          const LayerTriple<S>& triple,
                                                          const HeadConfig& cfg) {
  triple.validate();
  detail::check_head_config(cfg, triple.dk(), triple.d());
  const std::size_t dv = triple.d() / cfg.heads;
  std::vector<Tensor<S>> outs;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    LayerTriple<S> head{slice_last(triple.q, h * cfg.dk, cfg.dk),
                        slice_last(triple.k, h * cfg.dk, cfg.dk),
                        slice_last(triple.v, h * dv, dv)};
    RecurrentKV<S> head_state;
    if (!state.empty()) {
      head_state.K = slice_last(state.K, h * cfg.dk, cfg.dk);
      head_state.V = slice_last(state.V, h * dv, dv);
    }
    outs.push_back(rla_base_step(head_state, head).first);
  }
  // Head slices of the appended state equal appending per-head slices, so the
  // shared state is grown once with full rows.
  RecurrentKV<S> next;
  next.K = state.empty() ? triple.k : concat_rows(state.K, triple.k);
  next.V = state.empty() ? triple.v : concat_rows(state.V, triple.v);
  return {merge_heads(outs), next};
}

template <class S>
Tensor<S> multi_head_light_step(const LightState<S>& state, const LayerTriple<S>& triple,
                                const HeadConfig& cfg) {
  triple.validate();
  detail::check_head_config(cfg, triple.dk(), triple.d());
  const std::size_t dv = triple.d() / cfg.heads;
  std::vector<Tensor<S>> outs;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    LayerTriple<S> head{slice_last(triple.q, h * cfg.dk, cfg.dk),
                        slice_last(triple.k, h * cfg.dk, cfg.dk),
                        slice_last(triple.v, h * dv, dv)};
    LightState<S> head_state;
    if (!state.empty()) {
      head_state.o_prev = slice_last(state.o_prev, h * dv, dv);
      head_state.lambda_o = slice_last(state.lambda_o, h * dv, dv);
    }
    outs.push_back(rla_light_step(head_state, head));
  }
  return merge_heads(outs);
}

// ---------------------------------------------------------------------------
// Kernel-linearized recurrent layer attention:
//   U^t = U^{t-1} + phi(k)^T v,  Z^t = Z^{t-1} + phi(k)^T,
//   O^t = phi(q) U^t / phi(q) Z^t  (scalar denominator).
// ---------------------------------------------------------------------------

inline constexpr double kKernelDenomFloor = 1e-12;

template <class S>
std::pair<Tensor<S>, KernelState<S>> kernel_rla_step(const KernelState<S>& state,
                                                     const LayerTriple<S>& triple,
                                                     KernelPhi phi) {
  triple.validate();
  Tensor<S> pk = detail::apply_phi(triple.k, phi);
  Tensor<S> pq = detail::apply_phi(triple.q, phi);
  KernelState<S> next;
  Tensor<S> own_u = matmul(transpose(pk), triple.v);
  Tensor<S> own_z = transpose(pk);
  if (state.empty()) {
    next.U = own_u;
    next.Z = own_z;
  } else {
    if (state.U.shape()[0] != triple.dk() || state.U.shape()[1] != triple.d()) {
      throw shape_error("kernel_rla_step: state U " + shape_str(state.U.shape()) +
                        " does not match triple (Dk=" + std::to_string(triple.dk()) +
                        ", D=" + std::to_string(triple.d()) + ")");
    }
    next.U = add(state.U, own_u);
    next.Z = add(state.Z, own_z);
  }
  Tensor<S> numerator = matmul(pq, next.U);
  Tensor<S> denominator = matmul(pq, next.Z);
  return {div_by_scalar_tensor(numerator, denominator, static_cast<S>(kKernelDenomFloor)),
          next};
}

// Pre-recurrence normalized form: O = phi(Q) sum phi(K_s)^T V_s / phi(Q) sum phi(K_s)^T.
template <class S>
Tensor<S> kernel_rla_direct(const std::vector<LayerTriple<S>>& triples, KernelPhi phi) {
  if (triples.empty()) throw contract_error("kernel_rla_direct: empty layer list");
  Tensor<S> u, z;
  for (const auto& tr : triples) {
    tr.validate();
    Tensor<S> pk = detail::apply_phi(tr.k, phi);
    Tensor<S> du = matmul(transpose(pk), tr.v);
    Tensor<S> dz = transpose(pk);
    u = u.valid() ? add(u, du) : du;
    z = z.valid() ? add(z, dz) : dz;
  }
  Tensor<S> pq = detail::apply_phi(triples.back().q, phi);
  return div_by_scalar_tensor(matmul(pq, u), matmul(pq, z),
                              static_cast<S>(kKernelDenomFloor));
}

// Normalized attention weights of the final step (diagnostic; no graph).
template <class S>
std::vector<S> kernel_attention_weights(const std::vector<LayerTriple<S>>& triples,
                                        KernelPhi phi) {
  if (triples.empty()) throw contract_error("kernel_attention_weights: empty layer list");
  NoGradGuard ng;
  Tensor<S> pq = detail::apply_phi(triples.back().q, phi);
  std::vector<S> raw;
  S total = 0;
  for (const auto& tr : triples) {
    Tensor<S> s = matmul(pq, transpose(detail::apply_phi(tr.k, phi)));
    raw.push_back(s.item());
    total += s.item();
  }
  if (std::abs(static_cast<double>(total)) < kKernelDenomFloor) {
    throw numeric_error("kernel_attention_weights: degenerate normalization");
  }
  for (auto& w : raw) w /= total;
  return raw;
}

}  // namespace mrla
