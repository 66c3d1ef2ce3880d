#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sigcn {

struct OpCheckReport {
  std::string op;
  std::size_t instances = 0;
  std::size_t compared = 0;
  std::size_t kinks = 0;
  double max_rel_err = 0.0;
};

// Finite-difference checks for every differentiable primitive, the graph
// layer, instance association and the end-to-end decoder loss on a
// synthetic episode. Each entry runs `instances` seeded random cases.
std::vector<OpCheckReport> run_gradient_suite(std::uint64_t seed, std::size_t instances);

}  // namespace sigcn
