#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mrla/errors.hpp"

namespace mrla {

enum class MrlaMode { Base, Light };
enum class BlockVariant { Cnn, Vit };

inline const char* to_string(MrlaMode m) { return m == MrlaMode::Base ? "base" : "light"; }
inline const char* to_string(BlockVariant v) { return v == BlockVariant::Cnn ? "cnn" : "vit"; }

// One stage: blocks sharing channel count and spatial extent. For the vit
// variant height*width is the patch count (square grids only).
struct ArchStage {
  std::size_t num_blocks = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t feature_dim() const { return height * width * channels; }
};

// Architecture shape descriptor: drives toy models and analytic counting.
// The attention recurrence never crosses a stage boundary.
struct ArchSpec {
  BlockVariant variant = BlockVariant::Cnn;
  std::vector<ArchStage> stages;
  std::size_t dk = 32;  // channels per attention head

  void validate() const {
    if (stages.empty()) throw config_error("ArchSpec: no stages");
    if (dk == 0) throw config_error("ArchSpec: d_k must be positive");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      if (s.num_blocks == 0 || s.channels == 0 || s.height == 0 || s.width == 0) {
        throw config_error("ArchSpec: stage " + std::to_string(i) + " has a zero extent");
      }
      if (s.channels % dk != 0) {
        throw config_error("ArchSpec: stage " + std::to_string(i) + " channels " +
                           std::to_string(s.channels) + " not divisible by d_k " +
                           std::to_string(dk));
      }
      if (variant == BlockVariant::Vit && s.height != s.width) {
        throw config_error("ArchSpec: vit stages need square patch grids, stage " +
                           std::to_string(i) + " is " + std::to_string(s.height) + "x" +
                           std::to_string(s.width));
      }
    }
  }

  std::size_t total_blocks() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.num_blocks;
    return n;
  }
};

// The ResNet-50 shape: stage channels 256/512/1024/2048 with 3/4/6/3 blocks
// at 224x224 input resolution, d_k = 32.
inline ArchSpec resnet50_shape() {
  ArchSpec arch;
  arch.variant = BlockVariant::Cnn;
  arch.dk = 32;
  arch.stages = {
      {3, 256, 56, 56}, {4, 512, 28, 28}, {6, 1024, 14, 14}, {3, 2048, 7, 7}};
  return arch;
}

}  // namespace mrla
