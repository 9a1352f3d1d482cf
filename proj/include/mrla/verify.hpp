#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrla/models.hpp"

// Executable oracle suites for the equivalence and complexity claims, plus
// the query-similarity and attention-score statistics.

namespace mrla::verify {

inline constexpr double kEquivTol = 1e-6;   // f64 max-abs for algebraic equivalences
inline constexpr double kGradTol = 1e-4;    // relative, for finite-difference checks
inline constexpr double kGradEps = 1e-6;

struct FailureCase {
  std::uint64_t seed = 0;
  std::string dims;
  double max_abs_err = 0.0;
};

struct SuiteReport {
  std::string suite;
  std::size_t cases = 0;
  double worst_err = 0.0;
  std::vector<FailureCase> failures;

  bool pass() const { return failures.empty(); }
};

struct GridLimits {
  std::size_t t_max = 6;
  std::size_t d_max = 16;
  std::size_t dk_max = 8;
};

// Equivalence families, each over `n_cases` seeded random instances with the
// comparison applied at every intermediate layer.
SuiteReport base_vs_direct_suite(std::uint64_t seed0, std::size_t n_cases,
                                 GridLimits lim = {});
SuiteReport unroll_vs_recur_suite(std::uint64_t seed0, std::size_t n_cases,
                                  GridLimits lim = {});
SuiteReport light_vs_base_proportional_suite(std::uint64_t seed0, std::size_t n_cases,
                                             GridLimits lim = {});
SuiteReport light_vs_base_head_per_channel_suite(std::uint64_t seed0, std::size_t n_cases,
                                                 GridLimits lim = {});
SuiteReport kernel_step_vs_direct_suite(std::uint64_t seed0, std::size_t n_cases,
                                        GridLimits lim = {});
SuiteReport kernel_weight_normalization_suite(std::uint64_t seed0, std::size_t n_cases,
                                              GridLimits lim = {});
SuiteReport block_base_vs_direct_suite(std::uint64_t seed0, std::size_t n_cases);

std::vector<SuiteReport> equivalence_suite(std::uint64_t seed0, std::size_t n_cases);

// Finite-difference gradient checks: every tensor primitive, the attention
// operations against each input, and full blocks in all variant/mode pairs.
std::vector<SuiteReport> gradient_suite(std::uint64_t seed0, std::size_t n_cases);

// Exact combinatorial cost checks: closed forms and instrumented forwards.
std::vector<SuiteReport> complexity_suite();

bool all_pass(const std::vector<SuiteReport>& reports);

// ---------------------------------------------------------------------------
// Complexity probe (bench backend)
// ---------------------------------------------------------------------------

enum class BenchMode { Base, Light, Kernel };

BenchMode parse_bench_mode(const std::string& name);

struct ProbeRow {
  std::size_t depth = 0;
  std::uint64_t score_evals = 0;   // cumulative per stage
  std::uint64_t state_values = 0;  // carried into the final block
  double wall_ms = 0.0;            // measured attention-portion time
  double ratio = 0.0;              // score_evals growth vs the previous row
};

std::vector<ProbeRow> complexity_probe(BenchMode mode, const std::vector<std::size_t>& depths);

// Best-round wall time of one attention chain of `depth` steps.
double attention_wall_ms(BenchMode mode, std::size_t depth);

// Interleaved wall-time growth ratio between two depths of the same chain.
double attention_wall_ratio(BenchMode mode, std::size_t d_from, std::size_t d_to);

// ---------------------------------------------------------------------------
// Statistics dumps
// ---------------------------------------------------------------------------

inline constexpr std::size_t kCosineBins = 20;

// |cos| between two equal-length vectors; negative when either norm is zero
// (callers count those as skipped).
template <class S>
double abs_cosine(std::span<const S> a, std::span<const S> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return -1.0;
  return std::abs(dot) / std::sqrt(na * nb);
}

struct CosineStats {
  std::vector<std::size_t> bin_counts;  // kCosineBins uniform bins over [0,1]
  std::size_t cases = 0;
  std::size_t skipped = 0;  // zero-norm queries
};

// |cos| between per-head queries of consecutive blocks, first layer of each
// stage excluded. The model must run its attention blocks (mode != off).
template <class S>
CosineStats query_cosine_stats(const MiniModel<S>& model, const SynthDataset<S>& ds);

struct ScoreEntry {
  std::size_t head = 0;
  std::size_t t = 0;  // 1-based query layer
  std::size_t s = 0;  // 1-based attended layer, s <= t
  double value = 0.0;
};

struct ScoreMatrixResult {
  std::size_t depth = 0;
  std::size_t heads = 0;
  bool base = false;
  std::vector<ScoreEntry> entries;       // base: lower triangle; light: diagonal
  std::vector<ScoreEntry> carry_weights; // light only: mean per-head beta products
};

// Per-head attention scores of one stage for one input. Base mode yields the
// full lower triangle; light mode the diagonal plus carry-weight products.
template <class S>
ScoreMatrixResult attn_score_matrix(const MiniModel<S>& model, std::size_t stage,
                                    const Tensor<S>& input);

// ---------------------------------------------------------------------------

template <class S>
CosineStats query_cosine_stats(const MiniModel<S>& model, const SynthDataset<S>& ds) {
  if (model.mode == ModelMode::Off) {
    throw config_error("query_cosine_stats: model must run attention blocks");
  }
  NoGradGuard ng;
  CosineStats stats;
  stats.bin_counts.assign(kCosineBins, 0);
  for (const auto& sample : ds.samples) {
    ForwardTrace<S> trace;
    forward(model, sample.x, false, nullptr, &trace);
    for (const auto& stage : trace.stages) {
      for (std::size_t b = 1; b < stage.blocks.size(); ++b) {
        const auto& qa = stage.blocks[b - 1].query;
        const auto& qb = stage.blocks[b].query;
        const std::size_t c = qb.size();
        const std::size_t dk = model.arch.dk;
        for (std::size_t h = 0; h * dk < c; ++h) {
          const double v = abs_cosine<S>({qa.data() + h * dk, dk}, {qb.data() + h * dk, dk});
          if (v < 0.0) {
            ++stats.skipped;
            continue;
          }
          auto bin = static_cast<std::size_t>(v * kCosineBins);
          if (bin >= kCosineBins) bin = kCosineBins - 1;
          ++stats.bin_counts[bin];
          ++stats.cases;
        }
      }
    }
  }
  return stats;
}

template <class S>
ScoreMatrixResult attn_score_matrix(const MiniModel<S>& model, std::size_t stage,
                                    const Tensor<S>& input) {
  if (model.mode == ModelMode::Off) {
    throw config_error("attn_score_matrix: model must run attention blocks");
  }
  if (stage >= model.arch.stages.size()) {
    throw config_error("attn_score_matrix: stage " + std::to_string(stage) +
                       " out of range (" + std::to_string(model.arch.stages.size()) +
                       " stages)");
  }
  NoGradGuard ng;
  ForwardTrace<S> trace;
  forward(model, input, false, nullptr, &trace);
  const auto& blocks = trace.stages[stage].blocks;
  ScoreMatrixResult out;
  out.depth = blocks.size();
  out.heads = model.arch.stages[stage].channels / model.arch.dk;
  out.base = model.mode == ModelMode::Base;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const std::size_t t = bi + 1;
    const auto& rows = blocks[bi].scores;
    for (std::size_t si = 0; si < rows.size(); ++si) {
      const std::size_t s = out.base ? si + 1 : t;  // light traces only its own layer
      for (std::size_t h = 0; h < rows[si].size(); ++h) {
        out.entries.push_back({h, t, s, static_cast<double>(rows[si][h])});
      }
    }
  }
  if (!out.base) {
    // Mean per-head carry weight linking layer s into layer t:
    // product of the lambda vectors of blocks s+1..t over the head's channels.
    const auto& params = model.attn[stage];
    const std::size_t dk = model.arch.dk;
    for (std::size_t t = 2; t <= blocks.size(); ++t) {
      for (std::size_t s = 1; s < t; ++s) {
        for (std::size_t h = 0; h < out.heads; ++h) {
          double mean = 0.0;
          for (std::size_t i = h * dk; i < (h + 1) * dk; ++i) {
            double prod = 1.0;
            for (std::size_t j = s + 1; j <= t; ++j) {
              prod *= static_cast<double>(params[j - 1].lambda_o.data()[i]);
            }
            mean += prod;
          }
          out.carry_weights.push_back({h, t, s, mean / static_cast<double>(dk)});
        }
      }
    }
  }
  return out;
}

}  // namespace mrla::verify
