#include "mrla/counts.hpp"

#include <cmath>

namespace mrla {

std::size_t eca_kernel_size(std::size_t channels) {
  if (channels < 1) throw config_error("eca_kernel_size: channel count must be positive");
  const double v = std::log2(static_cast<double>(channels)) / 2.0 + 0.5;
  // Largest odd integer not above v, then its successor; ties go down.
  const double lower = 2.0 * std::floor((v - 1.0) / 2.0) + 1.0;
  const double upper = lower + 2.0;
  double k = (v - lower <= upper - v) ? lower : upper;
  if (k < 1.0) k = 1.0;
  return static_cast<std::size_t>(k);
}

std::uint64_t block_param_count(std::size_t channels, std::size_t kernel, MrlaMode mode) {
  std::uint64_t n = 9ull * channels + 2ull * kernel;
  if (mode == MrlaMode::Light) n += channels;
  return n;
}

BlockCost block_cost_count(const BlockShape& shape, MrlaMode mode, std::size_t t) {
  if (t < 1) throw contract_error("block_cost_count: layer index must be >= 1");
  const std::uint64_t c = shape.channels;
  const std::uint64_t hw = static_cast<std::uint64_t>(shape.height) * shape.width;
  const std::uint64_t d = hw * c;
  const std::uint64_t dk_total = c;  // query/key live in pooled channel space
  const std::uint64_t k = eca_kernel_size(shape.channels);

  BlockCost cost;
  // Feature paths shared by both modes: GAP, two 1-D convolutions, DWConv.
  cost.macs = hw * c + 2ull * c * k + 9ull * d;
  if (mode == MrlaMode::Base) {
    cost.score_evals = t;
    cost.state_values = static_cast<std::uint64_t>(t) * (d + dk_total);
    cost.macs += static_cast<std::uint64_t>(t) * (dk_total + d);
  } else {
    cost.score_evals = 1;
    cost.state_values = d + c;
    cost.macs += (dk_total + d) + d;  // own score + reweight, then the carry product
  }
  return cost;
}

ArchAccount arch_account(const ArchSpec& arch, MrlaMode mode) {
  arch.validate();
  ArchAccount acct;
  for (std::size_t i = 0; i < arch.stages.size(); ++i) {
    const auto& st = arch.stages[i];
    BlockShape shape{st.channels, st.height, st.width, arch.dk};
    StageAccount sa;
    sa.stage = i;
    const std::size_t k = eca_kernel_size(st.channels);
    sa.params = static_cast<std::uint64_t>(st.num_blocks) *
                block_param_count(st.channels, k, mode);
    for (std::size_t t = 1; t <= st.num_blocks; ++t) {
      const BlockCost bc = block_cost_count(shape, mode, t);
      sa.macs += bc.macs;
      sa.score_evals += bc.score_evals;
      sa.peak_state_values = std::max(sa.peak_state_values, bc.state_values);
    }
    acct.params += sa.params;
    acct.macs += sa.macs;
    acct.score_evals += sa.score_evals;
    acct.stages.push_back(sa);
  }
  return acct;
}

std::uint64_t arch_param_count(const ArchSpec& arch, MrlaMode mode) {
  return arch_account(arch, mode).params;
}

}  // namespace mrla
