#pragma once

#include <cstddef>
#include <span>

#include "sigcn/episodes.hpp"
#include "sigcn/tensor.hpp"

namespace sigcn {

enum class Level { kMid, kHigh };
enum class MatchMethod { kPixel, kRegion };

// H x W similarity map of the query against the support foreground, in [0, 1].
struct ActivationMap {
  Tensor values;
  Level level = Level::kMid;
  MatchMethod method = MatchMethod::kPixel;
};

inline constexpr double kNormEpsilon = 1e-12;

// Cosine similarity; 0 when either vector has norm below kNormEpsilon.
double cosine(std::span<const double> a, std::span<const double> b);

// (x - min) / (max - min); a constant map becomes all zeros.
Tensor min_max_normalize(const Tensor& raw);

// Raw (unnormalized) scores, one support shot.
// Pixel: max over support foreground pixels of cosine(query pixel, support pixel).
Tensor pixel_scores(const Tensor& fs, const BinaryMask& ms, const Tensor& fq);
// Region: both maps pooled to an r x r grid (support pooled over foreground
// only, empty cells dropped); each query cell takes its max cosine against the
// support cells and is broadcast back to its pixels.
Tensor region_scores(const Tensor& fs, const BinaryMask& ms, const Tensor& fq,
                     std::size_t grid);

// Bounds of cell `index` when splitting `extent` into `cells` contiguous parts.
struct CellRange {
  std::size_t begin, end;
};
CellRange grid_cell(std::size_t index, std::size_t extent, std::size_t cells);

// K-shot maps: raw scores are averaged over shots, then normalized.
ActivationMap pixel_activation(std::span<const Tensor> fs, std::span<const BinaryMask> ms,
                               const Tensor& fq, Level level = Level::kMid);
ActivationMap region_activation(std::span<const Tensor> fs, std::span<const BinaryMask> ms,
                                const Tensor& fq, std::size_t grid,
                                Level level = Level::kMid);

ActivationMap pixel_activation(const Tensor& fs, const BinaryMask& ms, const Tensor& fq);
ActivationMap region_activation(const Tensor& fs, const BinaryMask& ms, const Tensor& fq,
                                std::size_t grid);

// The four maps consumed downstream, all from one episode.
struct ActivationMaps {
  ActivationMap mid_pixel;
  ActivationMap mid_region;
  ActivationMap high_pixel;
  ActivationMap high_region;
};

ActivationMaps compute_activation_maps(const Episode& ep, std::size_t grid);

}  // namespace sigcn
