#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrla/arch.hpp"
#include "mrla/models.hpp"

namespace mrla {

// Flat key = value configuration ('#' comments). Unknown keys are rejected
// and every value is type-checked at parse time; command-line overrides win
// over file values.
struct Config {
  std::vector<std::size_t> arch_stages{3, 3};     // blocks per stage
  std::vector<std::size_t> arch_channels{8, 16};  // channels per stage
  std::vector<std::size_t> arch_spatial{8, 4};    // square side (cnn) / sqrt patches (vit)
  std::string arch_variant = "cnn";
  std::string mode = "light";  // off | base | light
  std::size_t d_k = 8;
  double lr = 0.35;
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 20;
  std::uint64_t seed = 7;
  double survival_prob = 1.0;
  std::size_t classes = 3;
  std::size_t per_class = 20;
  std::size_t in_channels = 3;
  double noise_std = 0.25;
  std::string out_dir = ".";

  static Config from_file(const std::string& path);

  // Applies one "key = value" assignment; `where` prefixes error messages.
  void set(const std::string& key, const std::string& value, const std::string& where);

  // Applies a command-line "key=value" override.
  void apply_override(const std::string& assignment);

  ArchSpec arch() const;
  ModelMode model_mode() const;
  void validate() const;
};

}  // namespace mrla
