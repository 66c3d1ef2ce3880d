#include "sigcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sigcn/errors.hpp"
#include "sigcn/rng.hpp"

namespace sigcn {

namespace {

struct Probe {
  double loss;
  std::vector<std::uint8_t> pattern;
};

Probe evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const double loss = build(tape, leaves).value().item();
  return {loss, tape.activation_pattern()};
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build,
                                const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var loss = build(tape, leaves);
    if (!loss.value().is_scalar()) throw ShapeError("gradcheck: loss must be scalar");
    for (const auto& l : leaves) analytic.push_back(tape.grad(loss, l));
  }

  GradCheckResult result;
  SplitMix64 rng(options.seed);
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> entries(inputs[k].size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_input && entries.size() > options.max_entries_per_input) {
      // Partial Fisher-Yates picks a reproducible subset.
      for (std::size_t i = 0; i < options.max_entries_per_input; ++i) {
        const std::size_t j = i + rng.next() % (entries.size() - i);
        std::swap(entries[i], entries[j]);
      }
      result.skipped += entries.size() - options.max_entries_per_input;
      entries.resize(options.max_entries_per_input);
    }
    for (std::size_t e : entries) {
      const double orig = probe[k][e];
      probe[k][e] = orig + options.step;
      const Probe up = evaluate(build, probe);
      probe[k][e] = orig - options.step;
      const Probe down = evaluate(build, probe);
      probe[k][e] = orig;
      if (up.pattern != down.pattern) {
        ++result.kinks;
        continue;
      }
      const double numeric = (up.loss - down.loss) / (2.0 * options.step);
      const double a = analytic[k][e];
      const double mag = std::max(std::abs(a), std::abs(numeric));
      if (mag <= options.min_magnitude) {
        ++result.skipped;
        continue;
      }
      result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / mag);
      ++result.compared;
    }
  }
  return result;
}

}  // namespace sigcn
