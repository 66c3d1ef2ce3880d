// sigcn: command-line driver for episode generation, inference, gradient
// checks, toy training, evaluation and tensor visualization.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sigcn/config.hpp"
#include "sigcn/episodes.hpp"
#include "sigcn/errors.hpp"
#include "sigcn/gradcheck_suite.hpp"
#include "sigcn/head.hpp"
#include "sigcn/matching.hpp"
#include "sigcn/pipeline.hpp"
#include "sigcn/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace sigcn;

namespace {

// Flags that override the config file. Unset flags leave the file (or the
// defaults) alone, giving flags > file > defaults.
struct ConfigFlags {
  std::string path;
  std::optional<double> threshold, alpha, beta, variation, noise, lr;
  std::optional<std::size_t> prototypes, instance_size, region_grid, channels, height,
      width, shots, steps;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> aspp_rates;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON config file");
    cmd->add_option("--threshold", threshold, "salience threshold");
    cmd->add_option("--prototypes", prototypes, "support prototypes per shot");
    cmd->add_option("--instance-size", instance_size, "support instance side");
    cmd->add_option("--alpha", alpha, "support message weight");
    cmd->add_option("--beta", beta, "peer query message weight");
    cmd->add_option("--region-grid", region_grid, "region matching grid side");
    cmd->add_option("--channels", channels);
    cmd->add_option("--height", height);
    cmd->add_option("--width", width);
    cmd->add_option("--shots", shots);
    cmd->add_option("--variation", variation, "query appearance variation");
    cmd->add_option("--noise", noise, "per-pixel feature noise");
    cmd->add_option("--aspp-rates", aspp_rates);
    cmd->add_option("--lr", lr);
    cmd->add_option("--steps", steps);
    cmd->add_option("--seed", seed);
  }

  Config resolve() const {
    Config c = path.empty() ? Config{} : load_config(path);
    if (threshold) c.threshold = *threshold;
    if (prototypes) c.prototypes = *prototypes;
    if (instance_size) c.instance_size = *instance_size;
    if (alpha) c.alpha = *alpha;
    if (beta) c.beta = *beta;
    if (region_grid) c.region_grid = *region_grid;
    if (channels) c.channels = *channels;
    if (height) c.height = *height;
    if (width) c.width = *width;
    if (shots) c.shots = *shots;
    if (variation) c.variation = *variation;
    if (noise) c.noise = *noise;
    if (!aspp_rates.empty()) c.aspp_rates = aspp_rates;
    if (lr) c.lr = *lr;
    if (steps) c.steps = *steps;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "ablated") return Variant::kAblated;
  throw ConfigError("unknown variant '" + name + "' (expected full or ablated)");
}

DecoderParams decoder_for(const Config& cfg, const std::string& params_path) {
  if (params_path.empty()) return init_decoder(cfg.decoder_shape(), cfg.seed);
  DecoderParams p = load_decoder(params_path);
  if (p.in_channels() != cfg.decoder_shape().in_channels) {
    throw ConfigError("decoder expects " + std::to_string(p.in_channels()) +
                      " input channels, pipeline produces " +
                      std::to_string(cfg.decoder_shape().in_channels));
  }
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io.write", "cannot write " + path.string());
  out << text;
  if (!out) throw IoError("io.write", "short write to " + path.string());
}

// -- gen ---------------------------------------------------------------------

void cmd_gen(const Config& cfg, const fs::path& out_dir) {
  save_episode(generate_episode(cfg.seed, cfg.generator()), out_dir);
  std::cout << "wrote " << (out_dir / "manifest.json").string() << "\n";
}

// -- infer -------------------------------------------------------------------

void cmd_infer(const fs::path& episode, const Config& cfg, const fs::path& out_dir,
               const std::string& params_path, Variant variant) {
  Episode ep = load_episode(episode);
  DecoderParams params = decoder_for(cfg, params_path);
  PipelineOutputs feats = run_pipeline(ep, cfg, variant);
  Prediction pred = predict(ep, feats, params);

  fs::create_directories(out_dir);
  write_pgm(out_dir / "mask.pgm", pred.mask.tensor());
  write_tensor(out_dir / "probability.stnsr", pred.probability);
  write_pgm(out_dir / "activation_mid_pixel.pgm", feats.maps.mid_pixel.values);
  write_pgm(out_dir / "activation_mid_region.pgm", feats.maps.mid_region.values);
  write_pgm(out_dir / "activation_high_pixel.pgm", feats.maps.high_pixel.values);
  write_pgm(out_dir / "activation_high_region.pgm", feats.maps.high_region.values);
  if (ep.query.mask) {
    const BinaryMask preds[] = {pred.mask};
    const BinaryMask gts[] = {*ep.query.mask};
    const int ids[] = {ep.class_id};
    write_text(out_dir / "metrics.json", evaluate_masks(preds, gts, ids).to_json() + "\n");
  }
  std::cout << "foreground pixels: " << pred.mask.count() << "\n";
}

// -- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, double tolerance, std::size_t instances) {
  bool ok = true;
  std::printf("%-20s %9s %9s %7s %12s\n", "op", "instances", "compared", "kinks",
              "max_rel_err");
  for (const OpCheckReport& r : run_gradient_suite(seed, instances)) {
    const bool pass = r.compared > 0 && r.max_rel_err <= tolerance;
    ok = ok && pass;
    std::printf("%-20s %9zu %9zu %7zu %12.3e %s\n", r.op.c_str(), r.instances,
                r.compared, r.kinks, r.max_rel_err, pass ? "ok" : "FAIL");
  }
  std::printf("%s (tolerance %.3g)\n", ok ? "PASS" : "FAIL", tolerance);
  return ok ? 0 : 1;
}

// -- overfit -----------------------------------------------------------------

void cmd_overfit(const fs::path& episode, const Config& cfg, Variant variant,
                 const std::string& params_path, const std::string& save_path) {
  Episode ep = load_episode(episode);
  if (!ep.query.mask) throw InputError("overfit needs a query mask in " + episode.string());
  PipelineOutputs feats = run_pipeline(ep, cfg, variant);
  TrainResult result = overfit(feats.decoder_input, *ep.query.mask,
                               decoder_for(cfg, params_path), cfg.steps, cfg.lr);
  std::printf("step,loss\n");
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    std::printf("%zu,%.17g\n", i, result.losses[i]);
  }
  if (!save_path.empty()) save_decoder(result.params, save_path);
}

// -- eval --------------------------------------------------------------------

void cmd_eval(const std::vector<std::string>& episodes, const Config& cfg,
              const std::string& params_path, bool oracle, Variant variant,
              const std::string& out_path) {
  if (episodes.empty()) throw InputError("eval needs at least one episode");
  std::vector<BinaryMask> preds, gts;
  std::vector<int> ids;
  std::optional<DecoderParams> params;
  if (!oracle) params = decoder_for(cfg, params_path);
  for (const std::string& path : episodes) {
    Episode ep = load_episode(path);
    if (!ep.query.mask) throw InputError("episode " + path + " has no query mask");
    gts.push_back(*ep.query.mask);
    ids.push_back(ep.class_id);
    if (oracle) {
      preds.push_back(*ep.query.mask);
    } else {
      preds.push_back(predict(ep, run_pipeline(ep, cfg, variant), *params).mask);
    }
  }
  const std::string report = evaluate_masks(preds, gts, ids).to_json() + "\n";
  if (!out_path.empty()) write_text(out_path, report);
  std::cout << report;
}

// -- viz ---------------------------------------------------------------------

void cmd_viz(const fs::path& in, const fs::path& out, std::optional<std::size_t> channel,
             bool normalize) {
  Tensor t = read_tensor(in);
  Tensor map;
  if (t.rank() == 2) {
    map = t;
  } else if (t.rank() == 3) {
    const std::size_t c = channel.value_or(0);
    if (!channel && t.dim(0) != 1) {
      throw InputError("tensor has " + std::to_string(t.dim(0)) +
                       " channels; pick one with --channel");
    }
    if (c >= t.dim(0)) throw InputError("channel " + std::to_string(c) + " out of range");
    map = Tensor::zeros({t.dim(1), t.dim(2)});
    for (std::size_t i = 0; i < t.dim(1); ++i)
      for (std::size_t j = 0; j < t.dim(2); ++j) map.at(i, j) = t.at(c, i, j);
  } else {
    throw ShapeError("viz expects a rank-2 or rank-3 tensor, got rank " +
                     std::to_string(t.rank()));
  }
  write_pgm(out, normalize ? min_max_normalize(map) : map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Support-induced graph reasoning for few-shot segmentation"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, infer_flags, overfit_flags, eval_flags;
  std::string out_dir, episode, params_path, save_path, variant_name = "full";
  std::string viz_in, viz_out;
  std::vector<std::string> episode_list;
  std::uint64_t gc_seed = 42;
  double gc_tolerance = 1e-4;
  std::size_t gc_instances = 20;
  bool oracle = false, normalize = false;
  std::optional<std::size_t> channel;

  auto* gen = app.add_subcommand("gen", "write a synthetic episode");
  gen_flags.attach(gen);
  gen->add_option("--out,-o", out_dir, "output directory")->required();

  auto* infer = app.add_subcommand("infer", "run the full pipeline on an episode");
  infer_flags.attach(infer);
  infer->add_option("--episode,-e", episode, "episode directory or manifest")->required();
  infer->add_option("--out,-o", out_dir, "output directory")->required();
  infer->add_option("--params,-p", params_path, "decoder parameters (JSON)");
  infer->add_option("--variant", variant_name, "full or ablated");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--tolerance", gc_tolerance, "max relative error");
  gradcheck->add_option("--instances", gc_instances, "random cases per op");

  auto* overfit_cmd = app.add_subcommand("overfit", "train the decoder on one episode");
  overfit_flags.attach(overfit_cmd);
  overfit_cmd->add_option("--episode,-e", episode, "episode directory or manifest")
      ->required();
  overfit_cmd->add_option("--params,-p", params_path, "initial decoder parameters");
  overfit_cmd->add_option("--save-params", save_path, "write trained parameters here");
  overfit_cmd->add_option("--variant", variant_name, "full or ablated");

  auto* eval = app.add_subcommand("eval", "batch inference with mIoU / FB-IoU");
  eval_flags.attach(eval);
  eval->add_option("episodes", episode_list, "episode directories or manifests");
  eval->add_option("--params,-p", params_path, "decoder parameters (JSON)");
  eval->add_flag("--oracle", oracle, "score ground truth against itself");
  eval->add_option("--variant", variant_name, "full or ablated");
  eval->add_option("--out,-o", out_dir, "also write the report to this file");

  auto* viz = app.add_subcommand("viz", "render a tensor as a PGM image");
  viz->add_option("input", viz_in, "STNSR1 tensor")->required();
  viz->add_option("output", viz_out, "PGM path")->required();
  viz->add_option("--channel", channel, "channel of a [C, H, W] tensor");
  viz->add_flag("--normalize", normalize, "min-max normalize before writing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      cmd_gen(gen_flags.resolve(), out_dir);
    } else if (infer->parsed()) {
      cmd_infer(episode, infer_flags.resolve(), out_dir, params_path,
                parse_variant(variant_name));
    } else if (gradcheck->parsed()) {
      return cmd_gradcheck(gc_seed, gc_tolerance, gc_instances);
    } else if (overfit_cmd->parsed()) {
      cmd_overfit(episode, overfit_flags.resolve(), parse_variant(variant_name),
                  params_path, save_path);
    } else if (eval->parsed()) {
      cmd_eval(episode_list, eval_flags.resolve(), params_path, oracle,
               parse_variant(variant_name), out_dir);
    } else if (viz->parsed()) {
      cmd_viz(viz_in, viz_out, channel, normalize);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
