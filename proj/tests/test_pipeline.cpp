#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "sigcn/config.hpp"
#include "sigcn/errors.hpp"
#include "sigcn/pipeline.hpp"

using namespace sigcn;

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    Config c;
    c.validate();
    CHECK(c.threshold == 0.7);
    CHECK(c.prototypes == 5);
    CHECK(c.instance_size == 10);
    CHECK(c.alpha == 0.5);
    CHECK(c.beta == 0.5);
    CHECK(c.region_grid == 4);
    CHECK(c.decoder_shape().in_channels == 2 * c.channels + 4);
  }

  TEST_CASE("parse overrides only the given keys") {
    Config c = parse_config(R"({"threshold": 0.5, "aspp_rates": [1, 3], "seed": 7})");
    CHECK(c.threshold == 0.5);
    CHECK(c.aspp_rates == std::vector<std::size_t>{1, 3});
    CHECK(c.seed == 7);
    CHECK(c.prototypes == 5);
  }

  TEST_CASE("json round trip") {
    Config c;
    c.alpha = 0.25;
    c.shots = 3;
    c.variation = 1.5;
    Config back = parse_config(config_to_json(c));
    CHECK(back.alpha == 0.25);
    CHECK(back.shots == 3);
    CHECK(back.variation == 1.5);
  }

  TEST_CASE("invalid configs are rejected") {
    CHECK_THROWS_AS(parse_config(R"({"thresold": 0.5})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"threshold": 1.5})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"prototypes": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"instance_size": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"region_grid": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"region_grid": 17})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"alpha": -1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"beta": -0.1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"lr": 0})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"threshold": "high"})"), ConfigError);
    CHECK_THROWS_AS(parse_config("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/sigcn.json"), MissingFileError);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("full variant equals the composed stages") {
    Config cfg;
    cfg.variation = 1.0;
    Episode ep = generate_episode(5, cfg.generator());
    PipelineOutputs out = run_pipeline(ep, cfg, Variant::kFull);

    ActivationMaps maps = compute_activation_maps(ep, cfg.region_grid);
    std::vector<Tensor> mids, highs, fgs;
    std::vector<BinaryMask> masks;
    for (const Shot& s : ep.shots) {
      mids.push_back(s.feat_mid);
      highs.push_back(s.feat_high);
      masks.push_back(s.mask);
      fgs.push_back(foreground_sequence(s.feat_high, s.mask));
    }
    Tensor v0 = run_branch(ep.query.feat_mid, maps.mid_region, mids, masks, cfg.sigr());
    Tensor v1 = run_branch(ep.query.feat_high, maps.high_region, highs, masks, cfg.sigr());
    Tensor vs = support_instance(fgs, cfg.instance_size);
    auto [q0, q1] = associate(v0, v1, vs, cfg.association());
    const Tensor map_list[] = {maps.mid_pixel.values, maps.mid_region.values,
                               maps.high_pixel.values, maps.high_region.values};

    CHECK(out.instance_mid == v0);
    CHECK(out.instance_high == v1);
    CHECK(out.support_instance == vs);
    CHECK(out.query0 == q0);
    CHECK(out.query1 == q1);
    CHECK(out.decoder_input == decoder_input(q0, q1, map_list));
  }

  TEST_CASE("ablated variant feeds raw features") {
    Config cfg;
    Episode ep = generate_episode(6, cfg.generator());
    PipelineOutputs out = run_pipeline(ep, cfg, Variant::kAblated);
    CHECK(out.query0 == ep.query.feat_mid);
    CHECK(out.query1 == ep.query.feat_high);
    CHECK(out.decoder_input.dims() == Shape{2 * cfg.channels + 4, 16, 16});
  }

  TEST_CASE("pipeline is deterministic and finite") {
    Config cfg;
    cfg.shots = 3;
    Episode ep = generate_episode(8, cfg.generator());
    PipelineOutputs a = run_pipeline(ep, cfg), b = run_pipeline(ep, cfg);
    CHECK(a.decoder_input == b.decoder_input);
    CHECK(all_finite(a.decoder_input));
    Prediction p = predict(ep, a, init_decoder(cfg.decoder_shape(), cfg.seed));
    CHECK(p.probability == Tensor::full({16, 16}, 0.5));
  }

  TEST_CASE("short overfit run lowers the loss from ln 2") {
    Config cfg;
    Episode ep = generate_episode(42, cfg.generator());
    PipelineOutputs f = run_pipeline(ep, cfg);
    TrainResult r = overfit(f.decoder_input, *ep.query.mask,
                            init_decoder(cfg.decoder_shape(), cfg.seed), 30, cfg.lr);
    CHECK(r.losses.front() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.losses.back() < 0.5 * r.losses.front());
  }
}
