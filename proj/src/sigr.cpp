#include "sigcn/sigr.hpp"

#include <cmath>

#include "sigcn/errors.hpp"

namespace sigcn {

SalienceMatrix select_salient(const Tensor& activation, double threshold) {
  if (activation.rank() != 2) throw ShapeError("salience expects an H x W map");
  Tensor s(activation.dims());
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < activation.size(); ++p) {
    if (activation[p] >= threshold) {
      s[p] = 1.0;
      idx.push_back(p);
    }
  }
  if (idx.empty()) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < activation.size(); ++p) {
      if (activation[p] > activation[best]) best = p;
    }
    s[best] = 1.0;
    idx.push_back(best);
  }
  return {BinaryMask(std::move(s)), std::move(idx)};
}

Tensor flatten_nodes(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("expected [C, H, W], got " + shape_str(x.dims()));
  return transpose(x.reshaped({x.dim(0), x.dim(1) * x.dim(2)}));
}

Tensor unflatten_nodes(const Tensor& nodes, std::size_t h, std::size_t w) {
  if (nodes.rank() != 2 || nodes.dim(0) != h * w) {
    throw ShapeError("node matrix " + shape_str(nodes.dims()) + " does not fit " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  return transpose(nodes).reshaped({nodes.dim(1), h, w});
}

QueryGraph build_graph(const Tensor& xq, const SalienceMatrix& salience) {
  if (xq.rank() != 3 || salience.mask.height() != xq.dim(1) ||
      salience.mask.width() != xq.dim(2)) {
    throw ShapeError("build_graph: features " + shape_str(xq.dims()) + " vs salience " +
                     shape_str(salience.mask.tensor().dims()));
  }
  QueryGraph g;
  g.nodes = flatten_nodes(xq);
  g.salient = salience.salient;
  const std::size_t n = g.nodes.dim(0), c = g.nodes.dim(1);
  g.adjacency = Tensor({n, n});
  auto row = [&](std::size_t i) {
    return std::span<const double>(g.nodes.data().subspan(i * c, c));
  };
  for (std::size_t a = 0; a < g.salient.size(); ++a) {
    for (std::size_t b = a + 1; b < g.salient.size(); ++b) {
      const std::size_t i = g.salient[a], j = g.salient[b];
      const double w = cosine(row(i), row(j));
      g.adjacency.at(i, j) = w;
      g.adjacency.at(j, i) = w;
    }
  }

  g.degree = Tensor({n});
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += g.adjacency.at(i, j);
    g.degree[i] = d;
    if (d > kNormEpsilon) inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  g.normalized = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = g.adjacency.at(i, j) + (i == j ? 1.0 : 0.0);
      if (a != 0.0) g.normalized.at(i, j) = inv_sqrt[i] * a * inv_sqrt[j];
    }
  }
  return g;
}

PrototypeSet support_prototypes(const Tensor& xs, const BinaryMask& ms, std::size_t k) {
  if (k < 1) throw ConfigError("prototype count k must be >= 1");
  const Tensor seq = foreground_sequence(xs, ms);
  const std::size_t n = seq.dim(0), c = seq.dim(1);
  const Tensor global = masked_average_pool(xs, ms);
  PrototypeSet out{Tensor({k, c})};
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t lo = b * n / k, hi = (b + 1) * n / k;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (hi == lo) {
        out.theta.at(b, ch) = global[ch];
        continue;
      }
      double s = 0.0;
      for (std::size_t r = lo; r < hi; ++r) s += seq.at(r, ch);
      out.theta.at(b, ch) = s / static_cast<double>(hi - lo);
    }
  }
  return out;
}

PrototypeSet fuse_prototypes(std::span<const PrototypeSet> sets) {
  if (sets.empty()) throw InputError("fuse_prototypes: no prototype sets");
  Tensor acc = sets[0].theta;
  for (std::size_t i = 1; i < sets.size(); ++i) acc = add(acc, sets[i].theta);
  return {scale(acc, 1.0 / static_cast<double>(sets.size()))};
}

Var sigcn_layer(const Var& x, const Var& a_hat, const Var& theta) {
  const auto& xd = x.dims();
  if (xd.size() != 2 || theta.dims().size() != 2 || theta.dims()[1] != xd[1]) {
    throw ShapeError("sigcn_layer: nodes " + shape_str(xd) + " kernel " +
                     shape_str(theta.dims()));
  }
  if (a_hat.dims() != Shape{xd[0], xd[0]}) {
    throw ShapeError("sigcn_layer: adjacency " + shape_str(a_hat.dims()) + " for " +
                     std::to_string(xd[0]) + " nodes");
  }
  return relu(matmul(a_hat, node_conv(x, theta)));
}

Tensor sigcn_layer(const Tensor& x, const Tensor& a_hat, const PrototypeSet& theta) {
  Tape tape;
  return sigcn_layer(tape.constant(x), tape.constant(a_hat), tape.constant(theta.theta))
      .value();
}

Var run_branch(const Var& xq, const Tensor& activation, const PrototypeSet& theta,
               const SigrConfig& cfg) {
  const Shape& d = xq.dims();
  if (d.size() != 3 || activation.dims() != Shape{d[1], d[2]}) {
    throw ShapeError("run_branch: features " + shape_str(d) + " vs activation " +
                     shape_str(activation.dims()));
  }
  Tape& tape = *xq.tape();
  const QueryGraph g = build_graph(xq.value(), select_salient(activation, cfg.threshold));
  const Var a_hat = tape.constant(g.normalized);
  const Var kernel = tape.constant(theta.theta);
  Var x = transpose(reshape(xq, {d[0], d[1] * d[2]}));
  for (std::size_t l = 0; l < cfg.layers; ++l) x = sigcn_layer(x, a_hat, kernel);
  return reshape(transpose(x), d);
}

Tensor run_branch(const Tensor& xq, const ActivationMap& activation,
                  std::span<const Tensor> xs, std::span<const BinaryMask> ms,
                  const SigrConfig& cfg) {
  if (xs.empty() || xs.size() != ms.size()) {
    throw ShapeError("run_branch: need one mask per support shot");
  }
  std::vector<PrototypeSet> sets;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sets.push_back(support_prototypes(xs[i], ms[i], cfg.prototypes));
  }
  Tape tape;
  return run_branch(tape.constant(xq), activation.values, fuse_prototypes(sets), cfg).value();
}

}  // namespace sigcn
