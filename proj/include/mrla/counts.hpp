#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mrla/arch.hpp"

// Analytic parameter, MAC, and state accounting for the attention blocks.
// MACs follow the 1 MAC = 1 FLOP convention common in vision-model tables.

namespace mrla {

// Adaptive 1-D kernel size from the channel count: nearest odd integer to
// log2(C)/2 + 1/2 (gamma = 2, b = 1), ties rounding down, minimum 1.
std::size_t eca_kernel_size(std::size_t channels);

// Learnable parameters of one block: 9C depthwise weights, two length-k
// 1-D kernels, plus the length-C carry vector in light mode.
std::uint64_t block_param_count(std::size_t channels, std::size_t kernel, MrlaMode mode);

struct BlockShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dk = 0;  // channels per head

  std::size_t feature_dim() const { return height * width * channels; }
  std::size_t heads() const { return channels / dk; }
};

struct BlockCost {
  std::uint64_t macs = 0;
  std::uint64_t score_evals = 0;   // query-row x key-row products (head-independent unit)
  std::uint64_t state_values = 0;  // numbers carried into the next block
};

// Cost of the block at layer index t (1-based) within its stage.
BlockCost block_cost_count(const BlockShape& shape, MrlaMode mode, std::size_t t);

struct StageAccount {
  std::size_t stage = 0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t score_evals = 0;
  std::uint64_t peak_state_values = 0;
};

struct ArchAccount {
  std::vector<StageAccount> stages;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t score_evals = 0;
};

// Whole-architecture accounting of the attention blocks (backbone excluded).
ArchAccount arch_account(const ArchSpec& arch, MrlaMode mode);

std::uint64_t arch_param_count(const ArchSpec& arch, MrlaMode mode);

}  // namespace mrla
