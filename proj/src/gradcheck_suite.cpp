#include "sigcn/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "sigcn/gradcheck.hpp"
#include "sigcn/head.hpp"
#include "sigcn/ia.hpp"
#include "sigcn/pipeline.hpp"
#include "sigcn/rng.hpp"
#include "sigcn/sigr.hpp"

namespace sigcn {

namespace {

Tensor random_tensor(SplitMix64& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values with |v| in [0.1, 1]; keeps ReLU inputs away from the kink.
Tensor away_from_zero(SplitMix64& rng, Shape dims) {
  Tensor t(std::move(dims));
  for (auto& v : t.data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Reduces an op output to a scalar with a fixed random weighting so every
// output entry carries a distinct gradient.
Var weighted_sum(const Var& out, const Tensor& weights) {
  return sum(mul(out, out.tape()->constant(weights)));
}

struct Case {
  std::vector<Tensor> inputs;
  LossBuilder build;
  GradCheckOptions options;
};

using CaseFactory = std::function<Case(SplitMix64&)>;

std::size_t small(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next() % (hi - lo + 1));
}

std::vector<std::pair<std::string, CaseFactory>> factories() {
  std::vector<std::pair<std::string, CaseFactory>> f;

  auto binary = [](const std::string& name, Var (*op)(const Var&, const Var&)) {
    return std::pair<std::string, CaseFactory>(name, [op](SplitMix64& rng) {
      const Shape d{small(rng, 1, 4), small(rng, 1, 5)};
      Tensor w = random_tensor(rng, d);
      return Case{{random_tensor(rng, d), random_tensor(rng, d)},
                  [op, w](Tape&, std::span<const Var> x) { return weighted_sum(op(x[0], x[1]), w); },
                  {}};
    });
  };
  f.push_back(binary("add", &add));
  f.push_back(binary("sub", &sub));
  f.push_back(binary("mul", &mul));

  f.emplace_back("scale", [](SplitMix64& rng) {
    const Shape d{small(rng, 1, 6)};
    const double c = rng.uniform(-2.0, 2.0);
    Tensor w = random_tensor(rng, d);
    return Case{{random_tensor(rng, d)},
                [c, w](Tape&, std::span<const Var> x) { return weighted_sum(scale(x[0], c), w); },
                {}};
  });
  f.emplace_back("relu", [](SplitMix64& rng) {
    const Shape d{small(rng, 1, 4), small(rng, 1, 4)};
    Tensor w = random_tensor(rng, d);
    return Case{{away_from_zero(rng, d)},
                [w](Tape&, std::span<const Var> x) { return weighted_sum(relu(x[0]), w); },
                {}};
  });
  f.emplace_back("sigmoid", [](SplitMix64& rng) {
    const Shape d{small(rng, 1, 4), small(rng, 1, 4)};
    Tensor w = random_tensor(rng, d);
    return Case{{random_tensor(rng, d, -4.0, 4.0)},
                [w](Tape&, std::span<const Var> x) { return weighted_sum(sigmoid(x[0]), w); },
                {}};
  });
  f.emplace_back("matmul", [](SplitMix64& rng) {
    const std::size_t m = small(rng, 1, 5), k = small(rng, 1, 5), n = small(rng, 1, 5);
    Tensor w = random_tensor(rng, {m, n});
    return Case{{random_tensor(rng, {m, k}), random_tensor(rng, {k, n})},
                [w](Tape&, std::span<const Var> x) { return weighted_sum(matmul(x[0], x[1]), w); },
                {}};
  });
  f.emplace_back("transpose", [](SplitMix64& rng) {
    const std::size_t m = small(rng, 1, 5), n = small(rng, 1, 5);
    Tensor w = random_tensor(rng, {n, m});
    return Case{{random_tensor(rng, {m, n})},
                [w](Tape&, std::span<const Var> x) { return weighted_sum(transpose(x[0]), w); },
                {}};
  });
  f.emplace_back("reshape", [](SplitMix64& rng) {
    const std::size_t m = small(rng, 1, 4), n = small(rng, 1, 4);
    Tensor w = random_tensor(rng, {n, m});
    return Case{{random_tensor(rng, {m, n})},
                [w, m, n](Tape&, std::span<const Var> x) {
                  return weighted_sum(reshape(x[0], {n, m}), w);
                },
                {}};
  });
  f.emplace_back("concat", [](SplitMix64& rng) {
    const std::size_t h = small(rng, 1, 4), w = small(rng, 1, 4);
    const std::size_t c0 = small(rng, 1, 3), c1 = small(rng, 1, 3);
    Tensor wt = random_tensor(rng, {c0 + c1, h, w});
    return Case{{random_tensor(rng, {c0, h, w}), random_tensor(rng, {c1, h, w})},
                [wt](Tape&, std::span<const Var> x) { return weighted_sum(concat(x), wt); },
                {}};
  });
  f.emplace_back("sum", [](SplitMix64& rng) {
    return Case{{random_tensor(rng, {small(rng, 1, 4), small(rng, 1, 4)})},
                [](Tape&, std::span<const Var> x) { return scale(sum(x[0]), 1.7); },
                {}};
  });
  f.emplace_back("mean", [](SplitMix64& rng) {
    return Case{{random_tensor(rng, {small(rng, 1, 4), small(rng, 1, 4)})},
                [](Tape&, std::span<const Var> x) { return scale(mean(x[0]), 1.7); },
                {}};
  });
  f.emplace_back("mean_pool", [](SplitMix64& rng) {
    const std::size_t c = small(rng, 1, 4);
    Tensor w = random_tensor(rng, {c});
    return Case{{random_tensor(rng, {c, small(rng, 1, 4), small(rng, 1, 4)})},
                [w](Tape&, std::span<const Var> x) { return weighted_sum(mean_pool(x[0]), w); },
                {}};
  });
  f.emplace_back("bilinear_resize", [](SplitMix64& rng) {
    const std::size_t c = small(rng, 1, 3), h = small(rng, 2, 5), w = small(rng, 2, 5);
    const std::size_t oh = small(rng, h, 9), ow = small(rng, w, 9);
    Tensor wt = random_tensor(rng, {c, oh, ow});
    return Case{{random_tensor(rng, {c, h, w})},
                [wt, oh, ow](Tape&, std::span<const Var> x) {
                  return weighted_sum(bilinear_resize(x[0], oh, ow), wt);
                },
                {}};
  });
  f.emplace_back("conv2d", [](SplitMix64& rng) {
    const std::size_t cin = small(rng, 1, 3), cout = small(rng, 1, 3);
    const std::size_t h = small(rng, 3, 6), w = small(rng, 3, 6);
    const std::size_t k = rng.uniform() < 0.5 ? 1 : 3;
    const std::size_t dil = small(rng, 1, 2);
    Tensor wt = random_tensor(rng, {cout, h, w});
    return Case{{random_tensor(rng, {cin, h, w}), random_tensor(rng, {cout, cin, k, k}),
                 random_tensor(rng, {cout})},
                [wt, dil](Tape&, std::span<const Var> x) {
                  return weighted_sum(conv2d(x[0], x[1], x[2], dil), wt);
                },
                {}};
  });
  f.emplace_back("node_conv", [](SplitMix64& rng) {
    const std::size_t n = small(rng, 1, 7), c = small(rng, 1, 4), k = small(rng, 1, 5);
    Tensor wt = random_tensor(rng, {n, c});
    return Case{{random_tensor(rng, {n, c}), random_tensor(rng, {k, c})},
                [wt](Tape&, std::span<const Var> x) { return weighted_sum(node_conv(x[0], x[1]), wt); },
                {}};
  });
  f.emplace_back("instance_normalize", [](SplitMix64& rng) {
    const std::size_t c = small(rng, 1, 3), h = small(rng, 1, 4), w = small(rng, 1, 4);
    Tensor wt = random_tensor(rng, {c, h, w});
    return Case{{random_tensor(rng, {c, h, w})},
                [wt](Tape&, std::span<const Var> x) {
                  return weighted_sum(instance_normalize(x[0]), wt);
                },
                {}};
  });
  f.emplace_back("bce", [](SplitMix64& rng) {
    const Shape d{small(rng, 1, 4), small(rng, 1, 4)};
    Tensor target(d);
    for (auto& v : target.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    return Case{{random_tensor(rng, d, 0.05, 0.95)},
                [target](Tape&, std::span<const Var> x) { return bce(x[0], target); },
                {}};
  });
  f.emplace_back("sigcn_layer", [](SplitMix64& rng) {
    // Non-negative features, as produced by the generator, give positive
    // degrees; gradients are taken with the graph held fixed.
    const std::size_t h = small(rng, 2, 4), w = small(rng, 2, 4), c = small(rng, 2, 4);
    const std::size_t k = small(rng, 1, 5);
    Tensor xq = random_tensor(rng, {c, h, w}, 0.0, 1.0);
    Tensor act = random_tensor(rng, {h, w}, 0.0, 1.0);
    const QueryGraph g = build_graph(xq, select_salient(act, 0.5));
    Tensor theta = away_from_zero(rng, {k, c});
    Tensor wt = random_tensor(rng, {h * w, c});
    const Tensor a_hat = g.normalized;
    return Case{{g.nodes, theta},
                [a_hat, wt](Tape& t, std::span<const Var> x) {
                  return weighted_sum(sigcn_layer(x[0], t.constant(a_hat), x[1]), wt);
                },
                {}};
  });
  f.emplace_back("associate", [](SplitMix64& rng) {
    const std::size_t c = small(rng, 1, 4), h = small(rng, 1, 4), w = small(rng, 1, 4);
    const std::size_t s = small(rng, 1, 3);
    AssociationConfig cfg{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
    Tensor w0 = random_tensor(rng, {c, h, w});
    Tensor w1 = random_tensor(rng, {c, h, w});
    return Case{{random_tensor(rng, {c, h, w}), random_tensor(rng, {c, h, w}),
                 random_tensor(rng, {c, s, s})},
                [cfg, w0, w1](Tape&, std::span<const Var> x) {
                  const auto out = associate(x[0], x[1], x[2], cfg);
                  return add(weighted_sum(out.query0, w0), weighted_sum(out.query1, w1));
                },
                {}};
  });
  f.emplace_back("pipeline_bce", [](SplitMix64& rng) {
    // End to end: synthetic episode -> matching -> graph reasoning ->
    // association -> decoder -> BCE, differentiated w.r.t. every decoder
    // tensor (a random subset of entries per tensor).
    Config cfg;
    cfg.height = cfg.width = 8;
    cfg.region_grid = 2;
    cfg.instance_size = 3;
    cfg.variation = 1.0;
    const Episode ep = generate_episode(rng.next(), cfg.generator());
    const PipelineOutputs feats = run_pipeline(ep, cfg);
    const Tensor input = feats.decoder_input;
    const DecoderParams params = init_decoder(cfg.decoder_shape(), rng.next(), false);
    std::vector<Tensor> tensors;
    params.for_each([&](const std::string&, const Tensor& t) { tensors.push_back(t); });
    const BinaryMask gt = *ep.query.mask;
    GradCheckOptions opt;
    opt.max_entries_per_input = 6;
    opt.seed = rng.next();
    return Case{std::move(tensors),
                [input, params, gt](Tape& t, std::span<const Var> x) {
                  DecoderLayers<Var> vars;
                  vars.aspp_w.resize(params.aspp_w.size());
                  vars.aspp_b.resize(params.aspp_b.size());
                  vars.residual_w.resize(params.residual_w.size());
                  vars.residual_b.resize(params.residual_b.size());
                  std::size_t i = 0;
                  vars.for_each([&](const std::string&, Var& v) { v = x[i++]; });
                  return decoder_loss(t.constant(input), vars, params.rates, gt);
                },
                opt};
  });
  return f;
}

}  // namespace

std::vector<OpCheckReport> run_gradient_suite(std::uint64_t seed, std::size_t instances) {
  std::vector<OpCheckReport> reports;
  SplitMix64 root(seed);
  const auto all = factories();
  for (std::size_t op = 0; op < all.size(); ++op) {
    const auto& [name, make] = all[op];
    SplitMix64 rng = root.fork(op);
    OpCheckReport r{name, instances, 0, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      Case c = make(rng);
      const GradCheckResult res = check_gradients(c.build, c.inputs, c.options);
      r.compared += res.compared;
      r.kinks += res.kinks;
      r.max_rel_err = std::max(r.max_rel_err, res.max_rel_err);
    }
    reports.push_back(r);
  }
  return reports;
}

}  // namespace sigcn
