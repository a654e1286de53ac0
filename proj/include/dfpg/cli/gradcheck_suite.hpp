#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dfpg::cli {

struct GradcheckRow {
  std::string module;
  int seeds = 0;
  double max_rel_error = 0;
  std::uint64_t worst_seed = 0;
  std::string worst_param;
  bool passed = false;
};

/**
 * Finite-difference checks in 64-bit on small random instances of every
 * differentiable piece: membership, rule activation (both axes), both heads,
 * the encoder, the fuzzy layer end to end, the annotator's pooled patch loss
 * and the composite training loss. Seeds 0..seeds-1 per row.
 */
std::vector<GradcheckRow> run_gradcheck_suite(int seeds = 10, double threshold = 1e-6);

std::string gradcheck_table(const std::vector<GradcheckRow>& rows);

}  // namespace dfpg::cli
