#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "sigcn/tape.hpp"
#include "sigcn/tensor.hpp"

namespace sigcn {

// Adaptive 1-D average pooling of a foreground sequence [N_fg, C] to s*s
// rows (contiguous bins [floor(i N / s^2), floor((i + 1) N / s^2)), empty bins
// take the global mean), laid out as a [C, s, s] support instance.
Tensor support_instance(const Tensor& foreground, std::size_t s);
// K-shot: pooled per shot, then averaged elementwise.
Tensor support_instance(std::span<const Tensor> foregrounds, std::size_t s);

struct AssociationConfig {
  double alpha = 0.5;  // weight of the support-instance message
  double beta = 0.5;   // weight of the peer query-instance message
};

struct AssociatedInstances {
  Var query0;
  Var query1;
};

// Instance-level message passing with R(v) = v reshaped to [C, spatial]:
//   m0  = R(vs) R(vs)^T R(vq0)     m10 = R(vq1) R(vq1)^T R(vq0)
//   vq0' = (vq0 + alpha * m0 + beta * m10) / 2
// and symmetrically for vq1'. Both updates read the pre-update instances.
AssociatedInstances associate(const Var& vq0, const Var& vq1, const Var& vs,
                              const AssociationConfig& cfg);
std::pair<Tensor, Tensor> associate(const Tensor& vq0, const Tensor& vq1,
                                    const Tensor& vs, const AssociationConfig& cfg);

}  // namespace sigcn
