#pragma once

#include <cstddef>
#include <vector>

#include "sigcn/config.hpp"
#include "sigcn/episodes.hpp"
#include "sigcn/head.hpp"
#include "sigcn/matching.hpp"

namespace sigcn {

enum class Variant {
  kFull,     // matching -> graph reasoning (both levels) -> association
  kAblated,  // matching only; raw query features go to the decoder
};

struct PipelineOutputs {
  ActivationMaps maps;
  Tensor instance_mid;      // branch output before association (full only)
  Tensor instance_high;
  Tensor support_instance;  // [C, s, s] (full only)
  Tensor query0;            // decoder feature inputs
  Tensor query1;
  Tensor decoder_input;     // [2C + 4, H, W]
};

// Everything up to the decoder. Deterministic; no learnable state.
PipelineOutputs run_pipeline(const Episode& ep, const Config& cfg,
                             Variant variant = Variant::kFull);

// Runs the decoder at the query mask resolution (or H x W without a mask).
Prediction predict(const Episode& ep, const PipelineOutputs& features,
                   const DecoderParams& params);

// Mean BCE of the decoder on `input` against `gt`, built on `tape`.
Var decoder_loss(const Var& input, const DecoderLayers<Var>& params,
                 std::span<const std::size_t> rates, const BinaryMask& gt);

struct TrainResult {
  DecoderParams params;
  // losses[i] is the loss before step i; the last entry is after the final
  // step, so there are steps + 1 entries.
  std::vector<double> losses;
};

// Plain SGD on one decoder input. steps == 0 leaves params untouched.
TrainResult overfit(const Tensor& input, const BinaryMask& gt, DecoderParams params,
                    std::size_t steps, double lr);

}  // namespace sigcn
