#pragma once

// Fixed decoder case whose output is frozen in data/decoder_golden.json.

#include "oracles.hpp"
#include "sigcn/head.hpp"

namespace golden {

inline sigcn::DecoderShape shape() { return {6, 4, {1, 2}, 2}; }

inline sigcn::DecoderParams params() {
  return sigcn::init_decoder(shape(), 20240611, /*zero_output=*/false);
}

inline sigcn::Tensor input() {
  sigcn::SplitMix64 rng(777);
  return oracle::random_tensor(rng, {6, 6, 6}, -2.0, 2.0);
}

inline constexpr std::size_t kOutH = 9;
inline constexpr std::size_t kOutW = 11;

}  // namespace golden
