#include "sigcn/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sigcn/errors.hpp"

namespace sigcn {

using nlohmann::json;

void Config::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be in [0, 1]");
  if (prototypes < 1) throw ConfigError("prototypes must be >= 1");
  if (instance_size < 1) throw ConfigError("instance_size must be >= 1");
  if (region_grid < 1) throw ConfigError("region_grid must be >= 1");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("alpha and beta must be >= 0");
  if (region_grid > std::min(height, width)) {
    throw ConfigError("region_grid must not exceed min(height, width)");
  }
  if (aspp_rates.empty()) throw ConfigError("aspp_rates must not be empty");
  for (auto r : aspp_rates) {
    if (r < 1) throw ConfigError("aspp_rates must be >= 1");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  generator().validate();
}

GeneratorConfig Config::generator() const {
  GeneratorConfig g;
  g.channels = channels;
  g.height = height;
  g.width = width;
  g.shots = shots;
  g.variation = variation;
  g.noise = noise;
  return g;
}

SigrConfig Config::sigr() const {
  SigrConfig s;
  s.threshold = threshold;
  s.prototypes = prototypes;
  return s;
}

AssociationConfig Config::association() const { return {alpha, beta}; }

DecoderShape Config::decoder_shape() const {
  DecoderShape d;
  d.in_channels = 2 * channels + 4;
  d.channels = channels;
  d.rates = aspp_rates;
  return d;
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Config parse_config(const std::string& json_text, Config base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const char* kKeys[] = {"threshold", "prototypes", "instance_size", "alpha",
                                "beta",      "region_grid", "channels",     "height",
                                "width",     "shots",       "variation",    "noise",
                                "aspp_rates", "lr",         "steps",        "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    take(j, "threshold", base.threshold);
    take(j, "prototypes", base.prototypes);
    take(j, "instance_size", base.instance_size);
    take(j, "alpha", base.alpha);
    take(j, "beta", base.beta);
    take(j, "region_grid", base.region_grid);
    take(j, "channels", base.channels);
    take(j, "height", base.height);
    take(j, "width", base.width);
    take(j, "shots", base.shots);
    take(j, "variation", base.variation);
    take(j, "noise", base.noise);
    take(j, "aspp_rates", base.aspp_rates);
    take(j, "lr", base.lr);
    take(j, "steps", base.steps);
    take(j, "seed", base.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  base.validate();
  return base;
}

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream f(path);
  if (!f) throw MissingFileError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_json(const Config& c) {
  json j = {{"threshold", c.threshold},   {"prototypes", c.prototypes},
            {"instance_size", c.instance_size}, {"alpha", c.alpha},
            {"beta", c.beta},             {"region_grid", c.region_grid},
            {"channels", c.channels},     {"height", c.height},
            {"width", c.width},           {"shots", c.shots},
            {"variation", c.variation},   {"noise", c.noise},
            {"aspp_rates", c.aspp_rates}, {"lr", c.lr},
            {"steps", c.steps},           {"seed", c.seed}};
  return j.dump(2);
}

}  // namespace sigcn
