#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sigcn/episodes.hpp"
#include "sigcn/head.hpp"
#include "sigcn/ia.hpp"
#include "sigcn/sigr.hpp"

namespace sigcn {

// Every tunable of the pipeline. JSON keys match the field names.
struct Config {
  double threshold = 0.7;          // salience threshold t
  std::size_t prototypes = 5;      // support prototypes k (GCN kernel size)
  std::size_t instance_size = 10;  // support instance side s
  double alpha = 0.5;
  double beta = 0.5;
  std::size_t region_grid = 4;     // r x r cells for region matching

  std::size_t channels = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t shots = 1;
  double variation = 0.0;
  double noise = 0.5;

  std::vector<std::size_t> aspp_rates = {1, 2, 4};
  double lr = 0.05;
  std::size_t steps = 500;
  std::uint64_t seed = 42;

  void validate() const;

  GeneratorConfig generator() const;
  SigrConfig sigr() const;
  AssociationConfig association() const;
  DecoderShape decoder_shape() const;
};

// Unknown keys are rejected so typos surface as config errors.
Config parse_config(const std::string& json_text, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});
std::string config_to_json(const Config& cfg);

}  // namespace sigcn
