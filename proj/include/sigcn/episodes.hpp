#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sigcn/tensor.hpp"

namespace sigcn {

// H x W mask with values exactly 0 or 1.
class BinaryMask {
 public:
  explicit BinaryMask(Tensor values);
  static BinaryMask zeros(std::size_t h, std::size_t w);
  // Thresholds a probability map: value >= threshold -> 1.
  static BinaryMask threshold(const Tensor& map, double threshold);

  std::size_t height() const { return values_.dim(0); }
  std::size_t width() const { return values_.dim(1); }
  bool operator()(std::size_t i, std::size_t j) const { return values_.at(i, j) != 0.0; }
  bool at_flat(std::size_t p) const { return values_[p] != 0.0; }
  std::size_t count() const;
  BinaryMask complement() const;
  const Tensor& tensor() const { return values_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  Tensor values_;
};

// Backbone stand-in features for one image at the two levels the pipeline
// consumes. Both are [C, H, W].
struct Shot {
  Tensor feat_mid;
  Tensor feat_high;
  BinaryMask mask;

  bool operator==(const Shot&) const = default;
};

struct Query {
  Tensor feat_mid;
  Tensor feat_high;
  std::optional<BinaryMask> mask;

  bool operator==(const Query&) const = default;
};

// One 1-way K-shot task.
struct Episode {
  int class_id = 0;
  std::vector<Shot> shots;
  Query query;

  std::size_t channels() const { return query.feat_mid.dim(0); }
  std::size_t height() const { return query.feat_mid.dim(1); }
  std::size_t width() const { return query.feat_mid.dim(2); }

  // Throws if feature dims disagree, masks are misshapen, or a support mask
  // has no foreground.
  void validate() const;

  bool operator==(const Episode&) const = default;
};

// Per-channel mean of f over pixels where m == 1. f: [C, H, W] -> [C].
Tensor masked_average_pool(const Tensor& f, const BinaryMask& m);

// Foreground feature vectors in row-major pixel order: [N_fg, C].
Tensor foreground_sequence(const Tensor& f, const BinaryMask& m);

struct GeneratorConfig {
  std::size_t channels = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t shots = 1;
  // Magnitude of the query foreground mean offset ("appearance variation").
  double variation = 0.0;
  // Std-dev of per-pixel Gaussian noise around the region means.
  double noise = 0.5;
  int num_classes = 5;

  void validate() const;
};

struct GeneratedEpisode {
  Episode episode;
  // Ground-truth region means, [C] each, per level (0 = mid, 1 = high).
  Tensor support_fg_mean[2];
  Tensor query_fg_mean[2];
};

// Deterministic in (seed, cfg). Features are rectified (>= 0) like backbone
// activations: max(0, region mean + noise * N(0, 1)). Feature values are rounded to f32 so the
// episode survives an STNSR1 round trip bit-exactly.
GeneratedEpisode generate(std::uint64_t seed, const GeneratorConfig& cfg);
Episode generate_episode(std::uint64_t seed, const GeneratorConfig& cfg);

// Writes manifest.json plus one STNSR1 file per tensor/mask into dir.
void save_episode(const Episode& ep, const std::filesystem::path& dir);
// Accepts either the manifest file or the directory holding manifest.json.
Episode load_episode(const std::filesystem::path& manifest_path);

}  // namespace sigcn
