#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sigcn/episodes.hpp"
#include "sigcn/matching.hpp"
#include "sigcn/tape.hpp"
#include "sigcn/tensor.hpp"

// Support-induced graph reasoning: salient query pixels become a fully
// connected cosine-weighted graph, and node states are propagated through
// two GCN layers whose state update is a 1-D convolution with a kernel made
// of support foreground prototypes.
namespace sigcn {

struct SalienceMatrix {
  BinaryMask mask;
  // Flat (row-major) indices of the salient pixels, ascending.
  std::vector<std::size_t> salient;

  std::size_t count() const { return salient.size(); }
};

// Pixels with activation >= threshold. If none qualify, the single argmax
// pixel (first in row-major order on ties) is selected instead.
SalienceMatrix select_salient(const Tensor& activation, double threshold);

struct QueryGraph {
  Tensor nodes;       // [N, C], row n = pixel n in row-major order
  std::vector<std::size_t> salient;
  Tensor adjacency;   // A0 [N, N]: cosine on salient pairs i != j, else 0
  Tensor degree;      // [N], row sums of A0 + I
  Tensor normalized;  // D^-1/2 (A0 + I) D^-1/2 [N, N]
};

// Nodes whose self-looped degree is not positive (only possible with
// negatively correlated features) get zero rows/columns in `normalized`.
QueryGraph build_graph(const Tensor& xq, const SalienceMatrix& salience);

// [C, H, W] -> [HW, C] and back.
Tensor flatten_nodes(const Tensor& x);
Tensor unflatten_nodes(const Tensor& nodes, std::size_t h, std::size_t w);

struct PrototypeSet {
  Tensor theta;  // [k, C]
  std::size_t size() const { return theta.dim(0); }
};

// Splits the row-major foreground sequence into k contiguous bins
// [floor(b N / k), floor((b + 1) N / k)) and averages each; empty bins take
// the global foreground mean.
PrototypeSet support_prototypes(const Tensor& xs, const BinaryMask& ms, std::size_t k);
// Elementwise mean of per-shot prototype sets.
PrototypeSet fuse_prototypes(std::span<const PrototypeSet> sets);

// ReLU(A_hat * node_conv(X, theta)).
Var sigcn_layer(const Var& x, const Var& a_hat, const Var& theta);
Tensor sigcn_layer(const Tensor& x, const Tensor& a_hat, const PrototypeSet& theta);

struct SigrConfig {
  double threshold = 0.7;
  std::size_t prototypes = 5;
  std::size_t layers = 2;
};

// One branch: salience -> graph -> stacked support-kernel GCN layers.
// xq is [C, H, W]; the result is the query instance feature, also [C, H, W].
// The graph is built from xq's value and held constant on the tape.
Var run_branch(const Var& xq, const Tensor& activation, const PrototypeSet& theta,
               const SigrConfig& cfg);
Tensor run_branch(const Tensor& xq, const ActivationMap& activation,
                  std::span<const Tensor> xs, std::span<const BinaryMask> ms,
                  const SigrConfig& cfg);

}  // namespace sigcn
