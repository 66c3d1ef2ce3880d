#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sigcn/tape.hpp"
#include "sigcn/tensor.hpp"

namespace sigcn {

// Builds a scalar loss on `tape` from leaves holding the given inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct GradCheckOptions {
  double step = 1e-4;
  // Entries where both gradients are at most this large are not compared.
  double min_magnitude = 1e-8;
  // When nonzero, only this many randomly chosen entries per input are
  // perturbed; the rest are skipped.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t compared = 0;
  std::size_t skipped = 0;
  // Entries whose +h / -h evaluations straddle a ReLU or clamp boundary; the
  // difference quotient is not a derivative there.
  std::size_t kinks = 0;
};

// Compares tape gradients against central finite differences
// (f(x + h) - f(x - h)) / 2h. Relative error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|). Entries whose two probes
// produce different Tape::activation_pattern()s are counted in `kinks` and
// not compared.
GradCheckResult check_gradients(const LossBuilder& build,
                                const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

}  // namespace sigcn
