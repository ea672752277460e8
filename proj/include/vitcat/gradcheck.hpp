#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vitcat::gradcheck {

struct Case {
  std::string name;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_rel_err < threshold; }
};

// Central finite-difference checks for every differentiable op plus the full
// tiny ViT-CAT loss (one case per fusion head). Shapes are random but small
// (<= 8 tokens, d <= 8). Deterministic for a given seed.
std::vector<Case> run_gradient_suite(uint64_t seed);

}  // namespace vitcat::gradcheck
