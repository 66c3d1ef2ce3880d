// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sigcn/config.hpp"
#include "sigcn/gradcheck_suite.hpp"
#include "sigcn/ia.hpp"
#include "sigcn/matching.hpp"
#include "sigcn/pipeline.hpp"
#include "sigcn/sigr.hpp"
#include "sigcn/tensor_io.hpp"

using namespace sigcn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::size_t pick(SplitMix64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Every differentiable op and the end-to-end loss against central
// differences, 20 instances each.
Outcome gradient_suite() {
  constexpr std::size_t kInstances = 20;
  constexpr double kTolerance = 1e-4;
  const auto t0 = Clock::now();
  const auto reports = run_gradient_suite(42, kInstances);
  const double elapsed = seconds_since(t0);
  Outcome o{elapsed < 120.0, ""};
  double worst = 0;
  std::string worst_op;
  for (const auto& r : reports) {
    if (r.instances < kInstances || r.compared == 0 || !(r.max_rel_err <= kTolerance)) {
      o.pass = false;
      o.detail += " failing:" + r.op;
    }
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_op = r.op;
    }
  }
  o.detail = std::to_string(reports.size()) + " ops x " + std::to_string(kInstances) +
             " instances, worst " + fmt("%.2e", worst) + " (" + worst_op + "), " +
             fmt("%.1fs", elapsed) + o.detail;
  return o;
}

// 2. Library vs explicit-loop oracles, N <= 64, C <= 8, within 1e-9.
Outcome loop_oracles() {
  constexpr int kCases = 50;
  constexpr double kTol = 1e-9;
  SplitMix64 rng(2024);
  double worst[5] = {0, 0, 0, 0, 0};
  for (int rep = 0; rep < kCases; ++rep) {
    // sigcn_layer
    {
      const std::size_t n = pick(rng, 1, 64), c = pick(rng, 1, 8), k = pick(rng, 1, 7);
      Tensor x = oracle::random_tensor(rng, {n, c});
      Tensor a = oracle::random_tensor(rng, {n, n});
      Tensor theta = oracle::random_tensor(rng, {k, c});
      worst[0] = std::max(worst[0], max_abs_diff(sigcn_layer(x, a, PrototypeSet{theta}),
                                                 oracle::sigcn_layer(x, a, theta)));
    }
    // associate
    {
      const std::size_t c = pick(rng, 1, 8), h = pick(rng, 1, 8), w = pick(rng, 1, 64 / h),
                        s = pick(rng, 1, 8);
      Tensor v0 = oracle::random_tensor(rng, {c, h, w});
      Tensor v1 = oracle::random_tensor(rng, {c, h, w});
      Tensor vs = oracle::random_tensor(rng, {c, s, s});
      const double alpha = rng.uniform(), beta = rng.uniform();
      auto [o0, o1] = associate(v0, v1, vs, {alpha, beta});
      auto [r0, r1] = oracle::associate(v0, v1, vs, alpha, beta);
      worst[1] = std::max({worst[1], max_abs_diff(o0, r0), max_abs_diff(o1, r1)});
    }
    // pixel_activation / region_activation
    {
      const std::size_t c = pick(rng, 1, 8), h = pick(rng, 2, 8), w = pick(rng, 2, 64 / h);
      Tensor fs = oracle::random_tensor(rng, {c, h, w});
      Tensor fq = oracle::random_tensor(rng, {c, h, w});
      BinaryMask ms = oracle::random_mask(rng, h, w);
      worst[2] = std::max(worst[2], max_abs_diff(pixel_activation(fs, ms, fq).values,
                                                 oracle::pixel_activation({fs}, {ms}, fq)));
      const std::size_t r = pick(rng, 1, std::min(h, w));
      worst[3] = std::max(worst[3], max_abs_diff(region_activation(fs, ms, fq, r).values,
                                                 oracle::region_activation({fs}, {ms}, fq, r)));
    }
    // miou
    {
      const std::size_t n = pick(rng, 1, 10), h = pick(rng, 2, 8), w = pick(rng, 2, 64 / h);
      std::vector<BinaryMask> preds, gts;
      std::vector<int> ids;
      for (std::size_t e = 0; e < n; ++e) {
        preds.push_back(oracle::random_mask(rng, h, w));
        gts.push_back(oracle::random_mask(rng, h, w));
        ids.push_back(static_cast<int>(pick(rng, 0, 3)));
      }
      worst[4] = std::max(worst[4],
                          std::abs(miou(preds, gts, ids) - oracle::metrics(preds, gts, ids).miou));
    }
  }
  const char* names[] = {"sigcn_layer", "associate", "pixel_activation", "region_activation",
                         "miou"};
  Outcome o{true, std::to_string(kCases) + " cases each;"};
  for (int i = 0; i < 5; ++i) {
    o.pass = o.pass && worst[i] <= kTol;
    o.detail += std::string(" ") + names[i] + " " + fmt("%.1e", worst[i]);
  }
  return o;
}

// 3. Salience monotonicity, adjacency symmetry / scale invariance and the
// D^1/2 1 eigenvector of A_hat.
Outcome graph_invariants() {
  constexpr int kCases = 100;
  constexpr double kTol = 1e-9;
  SplitMix64 rng(303);
  int failures = 0;
  double worst = 0;
  for (int rep = 0; rep < kCases; ++rep) {
    const std::size_t c = pick(rng, 1, 8), h = pick(rng, 2, 8), w = pick(rng, 2, 8);
    const std::size_t n = h * w;
    Tensor act = oracle::random_tensor(rng, {h, w}, 0, 1);
    double t1 = rng.uniform(), t2 = rng.uniform();
    if (t1 > t2) std::swap(t1, t2);
    const SalienceMatrix lo = select_salient(act, t1), hi = select_salient(act, t2);
    bool ok = std::includes(lo.salient.begin(), lo.salient.end(), hi.salient.begin(),
                            hi.salient.end());

    Tensor xq = oracle::random_tensor(rng, {c, h, w}, 0, 1);
    const QueryGraph g = build_graph(xq, lo);
    const double asym = max_abs_diff(g.adjacency, transpose(g.adjacency));
    Tensor scaled = xq;
    const std::size_t node = pick(rng, 0, n - 1);
    const double factor = rng.uniform(0.05, 20.0);
    for (std::size_t ch = 0; ch < c; ++ch) scaled[ch * n + node] *= factor;
    const double scale_err = max_abs_diff(build_graph(scaled, lo).adjacency, g.adjacency);
    Tensor root({n, 1});
    for (std::size_t i = 0; i < n; ++i) root[i] = std::sqrt(g.degree[i]);
    const double eig_err = max_abs_diff(matmul(g.normalized, root), root);
    const double nsym = max_abs_diff(g.normalized, transpose(g.normalized));
    worst = std::max({worst, asym, scale_err, eig_err, nsym});
    ok = ok && asym <= kTol && nsym <= kTol && scale_err <= kTol && eig_err <= kTol;
    failures += !ok;
  }
  return {failures == 0, std::to_string(kCases) + " cases, " + std::to_string(failures) +
                             " failures, worst deviation " + fmt("%.1e", worst)};
}

// 4. alpha = beta = 0 leaves half of each query instance.
Outcome zero_weight_association() {
  SplitMix64 rng(404);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t c = pick(rng, 1, 8), h = pick(rng, 1, 8), w = pick(rng, 1, 8),
                      s = pick(rng, 1, 10);
    Tensor v0 = oracle::random_tensor(rng, {c, h, w}, -10, 10);
    Tensor v1 = oracle::random_tensor(rng, {c, h, w}, -10, 10);
    Tensor vs = oracle::random_tensor(rng, {c, s, s}, -10, 10);
    auto [o0, o1] = associate(v0, v1, vs, {0.0, 0.0});
    worst = std::max({worst, max_abs_diff(o0, scale(v0, 0.5)), max_abs_diff(o1, scale(v1, 0.5))});
  }
  return {worst <= 1e-12, "100 cases, max deviation " + fmt("%.1e", worst)};
}

// 5. Overfit on the canonical episode.
Outcome overfit_episode() {
  const auto t0 = Clock::now();
  Config cfg;  // C = 8, H = W = 16, K = 1, lr 0.05, 500 steps, seed 42
  Episode ep = generate_episode(42, cfg.generator());
  PipelineOutputs feats = run_pipeline(ep, cfg);
  TrainResult r = overfit(feats.decoder_input, *ep.query.mask,
                          init_decoder(cfg.decoder_shape(), cfg.seed), cfg.steps, cfg.lr);
  const double q_iou = iou(predict(ep, feats, r.params).mask, *ep.query.mask);
  const double elapsed = seconds_since(t0);
  const bool pass = std::abs(r.losses.front() - std::log(2.0)) <= 1e-9 &&
                    r.losses.back() < 0.05 && q_iou > 0.9 && elapsed < 60.0;
  return {pass, "BCE " + fmt("%.6f", r.losses.front()) + " -> " + fmt("%.6f", r.losses.back()) +
                    ", IoU " + fmt("%.4f", q_iou) + ", " + fmt("%.1fs", elapsed)};
}

// 6. Full pipeline vs matching-only pipeline under appearance variation.
Outcome mechanism_sanity() {
  constexpr int kSeeds = 50;
  Config cfg;
  cfg.variation = 1.5;
  double full = 0, ablated = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    Episode ep = generate_episode(static_cast<std::uint64_t>(seed), cfg.generator());
    for (Variant v : {Variant::kFull, Variant::kAblated}) {
      PipelineOutputs feats = run_pipeline(ep, cfg, v);
      TrainResult r = overfit(feats.decoder_input, *ep.query.mask,
                              init_decoder(cfg.decoder_shape(), static_cast<std::uint64_t>(seed)),
                              cfg.steps, cfg.lr);
      const double q = iou(predict(ep, feats, r.params).mask, *ep.query.mask);
      (v == Variant::kFull ? full : ablated) += q / kSeeds;
    }
  }
  return {full > ablated, "mean query IoU full " + fmt("%.5f", full) + " vs ablated " +
                              fmt("%.5f", ablated) + " over " + std::to_string(kSeeds) +
                              " seeds"};
}

// 7. Inference via the CLI is byte-reproducible; STNSR1 round trips exactly.
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "sigcn_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto cli = [&](const std::string& args) {
    const std::string cmd = std::string("\"") + SIGCN_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  bool ok = cli("gen --seed 42 --variation 1.0 -o " + (dir / "ep").string()) &&
            cli("infer -e " + (dir / "ep").string() + " -o " + (dir / "r1").string()) &&
            cli("infer -e " + (dir / "ep").string() + " -o " + (dir / "r2").string());
  std::size_t files = 0;
  if (ok) {
    for (const auto& e : fs::directory_iterator(dir / "r1")) {
      ok = ok && slurp(e.path()) == slurp(dir / "r2" / e.path().filename());
      ++files;
    }
    ok = ok && files == 7;
  }

  SplitMix64 rng(707);
  std::size_t tensors = 0;
  for (int rep = 0; rep < 50; ++rep) {
    Shape dims;
    const std::size_t rank = pick(rng, 1, 4);
    for (std::size_t d = 0; d < rank; ++d) dims.push_back(pick(rng, 1, 6));
    Tensor t = round_to_f32(oracle::random_tensor(rng, dims, -1e6, 1e6));
    write_tensor(dir / "t.stnsr", t);
    ok = ok && read_tensor(dir / "t.stnsr") == t;
    ++tensors;
  }
  Episode ep = generate_episode(7, Config{}.generator());
  save_episode(ep, dir / "roundtrip");
  ok = ok && load_episode(dir / "roundtrip") == ep;
  return {ok, "infer twice: " + std::to_string(files) + " files byte-identical; " +
                  std::to_string(tensors) + " tensors + 1 episode round-tripped"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"1 gradient suite", gradient_suite},
      {"2 explicit-loop oracles", loop_oracles},
      {"3 graph invariants", graph_invariants},
      {"4 zero-weight association", zero_weight_association},
      {"5 single-episode overfit", overfit_episode},
      {"6 full vs ablated under variation", mechanism_sanity},
      {"7 determinism", determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed == 0 ? 0 : 1;
}
