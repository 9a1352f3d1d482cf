#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mrla/blocks.hpp"
#include "mrla/io.hpp"

// Desk-scale CNN and ViT stacks threading attention carries through stages
// (reset at every stage boundary), a deterministic full-batch trainer, and a
// synthetic class-conditional Gaussian dataset.

namespace mrla {

enum class ModelMode { Off, Base, Light };

inline const char* to_string(ModelMode m) {
  switch (m) {
    case ModelMode::Off: return "off";
    case ModelMode::Base: return "base";
    case ModelMode::Light: return "light";
  }
  return "?";
}

template <class S>
struct CnnBackboneBlock {
  Tensor<S> dw;  // {3,3,C}
  Tensor<S> pw;  // {C,C}
};

template <class S>
struct VitBackboneBlock {
  Tensor<S> mix;  // {N+1,N+1} token mixing
  Tensor<S> w1;   // {C,2C}
  Tensor<S> w2;   // {2C,C}
};

template <class S>
struct MiniModel {
  ArchSpec arch;
  ModelMode mode = ModelMode::Light;
  S survival_prob = S(1);
  std::size_t in_channels = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;

  Tensor<S> stem;                               // {Cin, C0}
  Tensor<S> cls_token;                          // vit only, {1, C0}
  std::vector<Tensor<S>> transitions;           // {C_{i-1}, C_i} per stage > 0
  std::vector<std::vector<CnnBackboneBlock<S>>> cnn_blocks;
  std::vector<std::vector<VitBackboneBlock<S>>> vit_blocks;
  std::vector<std::vector<MrlaBlockParams<S>>> attn;  // empty when mode == Off
  Tensor<S> head_w;                             // {C_last, classes}
  Tensor<S> head_b;                             // {1, classes}

  std::vector<Tensor<S>> parameters() const {
    std::vector<Tensor<S>> out{stem};
    if (cls_token.valid()) out.push_back(cls_token);
    for (const auto& t : transitions) out.push_back(t);
    for (const auto& st : cnn_blocks) {
      for (const auto& b : st) {
        out.push_back(b.dw);
        out.push_back(b.pw);
      }
    }
    for (const auto& st : vit_blocks) {
      for (const auto& b : st) {
        out.push_back(b.mix);
        out.push_back(b.w1);
        out.push_back(b.w2);
      }
    }
    for (const auto& st : attn) {
      for (const auto& b : st) {
        for (const auto& t : b.learnables()) out.push_back(t);
      }
    }
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
  }

  io::NamedTensors<S> named_parameters() const {
    io::NamedTensors<S> out;
    out.emplace_back("stem", stem);
    if (cls_token.valid()) out.emplace_back("cls_token", cls_token);
    for (std::size_t i = 0; i < transitions.size(); ++i) {
      out.emplace_back("transition." + std::to_string(i), transitions[i]);
    }
    auto block_prefix = [](std::size_t s, std::size_t b) {
      return "stage." + std::to_string(s) + ".block." + std::to_string(b) + ".";
    };
    for (std::size_t s = 0; s < cnn_blocks.size(); ++s) {
      for (std::size_t b = 0; b < cnn_blocks[s].size(); ++b) {
        out.emplace_back(block_prefix(s, b) + "dw", cnn_blocks[s][b].dw);
        out.emplace_back(block_prefix(s, b) + "pw", cnn_blocks[s][b].pw);
      }
    }
    for (std::size_t s = 0; s < vit_blocks.size(); ++s) {
      for (std::size_t b = 0; b < vit_blocks[s].size(); ++b) {
        out.emplace_back(block_prefix(s, b) + "mix", vit_blocks[s][b].mix);
        out.emplace_back(block_prefix(s, b) + "w1", vit_blocks[s][b].w1);
        out.emplace_back(block_prefix(s, b) + "w2", vit_blocks[s][b].w2);
      }
    }
    for (std::size_t s = 0; s < attn.size(); ++s) {
      for (std::size_t b = 0; b < attn[s].size(); ++b) {
        const auto& p = attn[s][b];
        out.emplace_back(block_prefix(s, b) + "attn.conv_q", p.conv_q);
        out.emplace_back(block_prefix(s, b) + "attn.conv_k", p.conv_k);
        out.emplace_back(block_prefix(s, b) + "attn.w_v", p.w_v);
        if (p.lambda_o.valid()) {
          out.emplace_back(block_prefix(s, b) + "attn.lambda_o", p.lambda_o);
        }
      }
    }
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
  }

  std::uint64_t attn_param_count() const {
    std::uint64_t n = 0;
    for (const auto& st : attn) {
      for (const auto& b : st) n += b.learnable_count();
    }
    return n;
  }
};

namespace detail {

template <class S>
Tensor<S> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  return Tensor<S>::uniform(std::move(shape), rng, -bound, bound, true);
}

// Pointwise (1x1) channel projection of an HxWxC map.
template <class S>
Tensor<S> pointwise(const Tensor<S>& x, const Tensor<S>& w) {
  const std::size_t h = x.shape()[0], wd = x.shape()[1], c = x.shape()[2];
  Tensor<S> flat = reshape(x, {h * wd, c});
  Tensor<S> y = matmul(flat, w);
  return reshape(y, {h, wd, y.shape()[1]});
}

}  // namespace detail

// Deterministic build: seeded uniform fan-in initialization, lambda_o = 1.
template <class S>
MiniModel<S> build_model(const ArchSpec& arch, ModelMode mode, std::uint64_t seed,
                         std::size_t in_channels, std::size_t classes,
                         S survival_prob = S(1)) {
  arch.validate();
  if (in_channels == 0 || classes < 2) {
    throw config_error("build_model: need in_channels >= 1 and classes >= 2");
  }
  if (arch.variant == BlockVariant::Vit) {
    for (std::size_t i = 1; i < arch.stages.size(); ++i) {
      if (arch.stages[i].height != arch.stages[0].height) {
        throw config_error("build_model: vit stages must share the patch grid");
      }
    }
  } else {
    for (std::size_t i = 1; i < arch.stages.size(); ++i) {
      const auto &prev = arch.stages[i - 1], &cur = arch.stages[i];
      const bool same = cur.height == prev.height && cur.width == prev.width;
      const bool halved = cur.height * 2 == prev.height && cur.width * 2 == prev.width;
      if (!same && !halved) {
        throw config_error("build_model: stage " + std::to_string(i) +
                           " spatial must equal or halve the previous stage");
      }
    }
  }

  Rng rng(seed);
  MiniModel<S> m;
  m.arch = arch;
  m.mode = mode;
  m.survival_prob = survival_prob;
  m.in_channels = in_channels;
  m.classes = classes;
  m.seed = seed;

  const std::size_t c0 = arch.stages[0].channels;
  m.stem = detail::fan_in_uniform<S>({in_channels, c0}, in_channels, rng);
  if (arch.variant == BlockVariant::Vit) {
    m.cls_token = detail::fan_in_uniform<S>({1, c0}, c0, rng);
  }
  for (std::size_t i = 1; i < arch.stages.size(); ++i) {
    m.transitions.push_back(detail::fan_in_uniform<S>(
        {arch.stages[i - 1].channels, arch.stages[i].channels},
        arch.stages[i - 1].channels, rng));
  }
  for (const auto& st : arch.stages) {
    const std::size_t c = st.channels;
    if (arch.variant == BlockVariant::Cnn) {
      std::vector<CnnBackboneBlock<S>> blocks;
      for (std::size_t b = 0; b < st.num_blocks; ++b) {
        blocks.push_back({detail::fan_in_uniform<S>({3, 3, c}, 9, rng),
                          detail::fan_in_uniform<S>({c, c}, c, rng)});
      }
      m.cnn_blocks.push_back(std::move(blocks));
    } else {
      const std::size_t tokens = st.height * st.width + 1;
      std::vector<VitBackboneBlock<S>> blocks;
      for (std::size_t b = 0; b < st.num_blocks; ++b) {
        blocks.push_back({detail::fan_in_uniform<S>({tokens, tokens}, tokens, rng),
                          detail::fan_in_uniform<S>({c, 2 * c}, c, rng),
                          detail::fan_in_uniform<S>({2 * c, c}, 2 * c, rng)});
      }
      m.vit_blocks.push_back(std::move(blocks));
    }
    if (mode != ModelMode::Off) {
      const MrlaMode bm = mode == ModelMode::Base ? MrlaMode::Base : MrlaMode::Light;
      std::vector<MrlaBlockParams<S>> blocks;
      for (std::size_t b = 0; b < st.num_blocks; ++b) {
        blocks.push_back(MrlaBlockParams<S>::init(c, arch.dk, bm, arch.variant, rng));
      }
      m.attn.push_back(std::move(blocks));
    }
  }
  const std::size_t c_last = arch.stages.back().channels;
  m.head_w = detail::fan_in_uniform<S>({c_last, classes}, c_last, rng);
  m.head_b = Tensor<S>::zeros({1, classes}, true);
  return m;
}

// Per-stage instrumentation of one forward pass.
template <class S>
struct ForwardTrace {
  struct Stage {
    Tensor<S> input;   // stage input, after the transition
    Tensor<S> output;  // last block's output
    std::vector<BlockTrace<S>> blocks;
  };
  std::vector<Stage> stages;
};

// Forward pass of one sample. The carry is created empty at stage entry and
// dropped at stage exit. During training, stochastic depth replaces a block's
// attention output by the backbone output and leaves the carry untouched.
template <class S>
Tensor<S> forward(const MiniModel<S>& model, const Tensor<S>& x, bool training = false,
                  Rng* drop_rng = nullptr, ForwardTrace<S>* trace = nullptr) {
  const bool vit = model.arch.variant == BlockVariant::Vit;
  Tensor<S> cur;
  if (vit) {
    if (x.rank() != 2 || x.shape()[1] != model.in_channels) {
      throw shape_error("forward: expected NxCin patch tokens, got " + shape_str(x.shape()));
    }
    cur = concat_rows(model.cls_token, matmul(x, model.stem));
  } else {
    if (x.rank() != 3 || x.shape()[2] != model.in_channels) {
      throw shape_error("forward: expected HxWxCin input, got " + shape_str(x.shape()));
    }
    cur = detail::pointwise(x, model.stem);
  }

  const bool use_drop = training && model.survival_prob < S(1);
  for (std::size_t s = 0; s < model.arch.stages.size(); ++s) {
    const auto& st = model.arch.stages[s];
    if (s > 0) {
      if (vit) {
        cur = matmul(cur, model.transitions[s - 1]);
      } else {
        cur = detail::pointwise(cur, model.transitions[s - 1]);
        if (st.height * 2 == model.arch.stages[s - 1].height) cur = avgpool2x2(cur);
      }
    }
    if (trace) trace->stages.push_back({});
    if (trace) trace->stages.back().input = cur;

    BlockCarry<S> carry;  // fresh at every stage entry
    for (std::size_t b = 0; b < st.num_blocks; ++b) {
      Tensor<S> backbone_out;
      if (vit) {
        const auto& bb = model.vit_blocks[s][b];
        Tensor<S> mixed = add(cur, matmul(bb.mix, cur));
        backbone_out = add(mixed, matmul(gelu(matmul(mixed, bb.w1)), bb.w2));
      } else {
        const auto& bb = model.cnn_blocks[s][b];
        Tensor<S> h = detail::pointwise(dwconv3x3_same(cur, bb.dw), bb.pw);
        backbone_out = add(gelu(h), cur);
      }
      if (model.mode == ModelMode::Off) {
        cur = backbone_out;
        continue;
      }
      const bool dropped =
          use_drop && drop_rng &&
          drop_rng->next_double() >= static_cast<double>(model.survival_prob);
      if (dropped) {
        cur = backbone_out;
        continue;
      }
      BlockTrace<S> bt;
      auto [o, next_carry] =
          mrla_block_forward(model.attn[s][b], backbone_out, carry, trace ? &bt : nullptr);
      if (trace) trace->stages.back().blocks.push_back(std::move(bt));
      carry = std::move(next_carry);
      cur = o;
    }
    if (trace) trace->stages.back().output = cur;
  }

  Tensor<S> feat;
  if (vit) {
    feat = slice_rows(cur, 0, 1);
  } else {
    feat = reshape(gap(cur), {1, model.arch.stages.back().channels});
  }
  return add(matmul(feat, model.head_w), model.head_b);
}

// ---------------------------------------------------------------------------
// Synthetic dataset: class-conditional Gaussian patterns, exactly balanced,
// byte-identical for identical seeds.
// ---------------------------------------------------------------------------

template <class S>
struct SynthSample {
  Tensor<S> x;
  std::size_t label;
};

template <class S>
struct SynthDataset {
  std::vector<SynthSample<S>> samples;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
};

template <class S>
SynthDataset<S> synth_dataset(std::size_t classes, std::size_t per_class, Shape shape,
                              std::uint64_t seed, S mean_scale = S(1),
                              S noise_std = S(0.25)) {
  if (classes < 2) throw config_error("synth_dataset: need at least 2 classes");
  const std::size_t n = shape_numel(shape);
  Rng rng(seed);
  std::vector<std::vector<S>> means(classes);
  for (auto& mu : means) {
    mu.resize(n);
    for (auto& v : mu) v = rng.uniform<S>(-mean_scale, mean_scale);
  }
  SynthDataset<S> ds;
  ds.classes = classes;
  ds.seed = seed;
  for (std::size_t s = 0; s < per_class; ++s) {
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<S> vals(n);
      for (std::size_t i = 0; i < n; ++i) vals[i] = means[c][i] + rng.normal<S>(0, noise_std);
      ds.samples.push_back({Tensor<S>::from_data(shape, std::move(vals)), c});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Training: full-batch gradient descent. One step accumulates gradients over
// every sample and applies a single averaged update, so the recorded per-step
// loss is the dataset mean cross-entropy and stays constant when lr = 0.
// ---------------------------------------------------------------------------

struct EpochStats {
  std::vector<double> step_losses;  // dataset mean cross-entropy per step
  double mean_loss = 0.0;
  double accuracy = 0.0;  // fraction correct on the epoch's forward passes
};

template <class S>
EpochStats train_epoch(MiniModel<S>& model, const SynthDataset<S>& dataset, S lr,
                       std::uint64_t seed, std::size_t steps = 1) {
  if (lr < S(0)) throw config_error("train_epoch: lr must be >= 0");
  if (dataset.samples.empty()) throw config_error("train_epoch: empty dataset");
  auto params = model.parameters();
  Rng drop_rng(seed);
  EpochStats stats;
  const auto n = static_cast<double>(dataset.samples.size());
  std::size_t last_correct = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    zero_grads(params);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      const auto& sample = dataset.samples[i];
      Tensor<S> logits = forward(model, sample.x, /*training=*/true, &drop_rng);
      Tensor<S> loss = cross_entropy_logits(logits, sample.label);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw numeric_error("train_epoch: non-finite loss at step " + std::to_string(step) +
                            ", sample " + std::to_string(i));
      }
      backward(loss);
      total += lv;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < model.classes; ++c) {
        if (logits(0, c) > logits(0, arg)) arg = c;
      }
      if (arg == sample.label) ++correct;
    }
    sgd_step(params, static_cast<S>(static_cast<double>(lr) / n));
    stats.step_losses.push_back(total / n);
    last_correct = correct;
  }
  for (double v : stats.step_losses) stats.mean_loss += v;
  stats.mean_loss /= static_cast<double>(stats.step_losses.size());
  stats.accuracy = static_cast<double>(last_correct) / n;
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpointing. The architecture descriptor rides inside the checkpoint as a
// reserved "meta/arch" record (small integers split 16 bits at a time so they
// stay exact in f32), letting a checkpoint rebuild its model alone.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void push_u64_split(std::vector<S>& v, std::uint64_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<S>((x >> (16 * i)) & 0xffff));
}

template <class S>
std::uint64_t pop_u64_split(const std::vector<S>& v, std::size_t& at) {
  std::uint64_t x = 0;
  for (int i = 0; i < 4; ++i) {
    x |= static_cast<std::uint64_t>(static_cast<std::uint64_t>(v.at(at++))) << (16 * i);
  }
  return x;
}

}  // namespace detail

template <class S>
io::NamedTensors<S> checkpoint_entries(const MiniModel<S>& model) {
  std::vector<S> meta;
  meta.push_back(model.arch.variant == BlockVariant::Cnn ? S(0) : S(1));
  meta.push_back(model.mode == ModelMode::Off ? S(0)
                                              : model.mode == ModelMode::Base ? S(1) : S(2));
  meta.push_back(static_cast<S>(model.arch.dk));
  meta.push_back(static_cast<S>(model.in_channels));
  meta.push_back(static_cast<S>(model.classes));
  detail::push_u64_split(meta, model.seed);
  meta.push_back(model.survival_prob);
  meta.push_back(static_cast<S>(model.arch.stages.size()));
  for (const auto& st : model.arch.stages) {
    meta.push_back(static_cast<S>(st.num_blocks));
    meta.push_back(static_cast<S>(st.channels));
    meta.push_back(static_cast<S>(st.height));
    meta.push_back(static_cast<S>(st.width));
  }
  io::NamedTensors<S> out;
  out.emplace_back("meta/arch", Tensor<S>::from_data({meta.size()}, meta));
  for (auto& entry : model.named_parameters()) out.push_back(std::move(entry));
  return out;
}

template <class S>
MiniModel<S> model_from_checkpoint(const io::NamedTensors<S>& entries) {
  const Tensor<S>* meta_t = nullptr;
  for (const auto& [name, t] : entries) {
    if (name == "meta/arch") meta_t = &t;
  }
  if (!meta_t) throw io_error("checkpoint has no meta/arch record");
  std::vector<S> meta(meta_t->data().begin(), meta_t->data().end());
  std::size_t at = 0;
  ArchSpec arch;
  arch.variant = meta.at(at++) == S(0) ? BlockVariant::Cnn : BlockVariant::Vit;
  const auto mode_tag = static_cast<int>(meta.at(at++));
  const ModelMode mode = mode_tag == 0 ? ModelMode::Off
                                       : mode_tag == 1 ? ModelMode::Base : ModelMode::Light;
  arch.dk = static_cast<std::size_t>(meta.at(at++));
  const auto in_channels = static_cast<std::size_t>(meta.at(at++));
  const auto classes = static_cast<std::size_t>(meta.at(at++));
  const std::uint64_t seed = detail::pop_u64_split(meta, at);
  const S survival = meta.at(at++);
  const auto n_stages = static_cast<std::size_t>(meta.at(at++));
  for (std::size_t i = 0; i < n_stages; ++i) {
    ArchStage st;
    st.num_blocks = static_cast<std::size_t>(meta.at(at++));
    st.channels = static_cast<std::size_t>(meta.at(at++));
    st.height = static_cast<std::size_t>(meta.at(at++));
    st.width = static_cast<std::size_t>(meta.at(at++));
    arch.stages.push_back(st);
  }
  MiniModel<S> model = build_model<S>(arch, mode, seed, in_channels, classes, survival);
  auto params = model.named_parameters();
  for (auto& [name, target] : params) {
    bool found = false;
    for (const auto& [ename, source] : entries) {
      if (ename != name) continue;
      if (source.shape() != target.shape()) {
        throw io_error("checkpoint entry '" + name + "' has shape " +
                       shape_str(source.shape()) + ", expected " + shape_str(target.shape()));
      }
      target.node()->value = source.node()->value;
      found = true;
      break;
    }
    if (!found) throw io_error("checkpoint is missing entry '" + name + "'");
  }
  return model;
}

// Evaluation accuracy with frozen weights (no graphs, no dropping).
template <class S>
double evaluate(const MiniModel<S>& model, const SynthDataset<S>& dataset) {
  NoGradGuard ng;
  std::size_t correct = 0;
  for (const auto& sample : dataset.samples) {
    Tensor<S> logits = forward(model, sample.x);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < model.classes; ++c) {
      if (logits(0, c) > logits(0, arg)) arg = c;
    }
    if (arg == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
}

}  // namespace mrla
