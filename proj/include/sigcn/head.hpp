#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sigcn/episodes.hpp"
#include "sigcn/tape.hpp"
#include "sigcn/tensor.hpp"

namespace sigcn {

// Decoder weights, generic over Tensor (storage) and Var (on a tape).
// The input is first instance-normalized per channel (no parameters): the
// association messages are unnormalized Gram products whose magnitude
// scales with the spatial size.
//   reduce   1x1, in -> C
//   aspp[i]  3x3 at rates[i], C -> C   plus a 1x1 pointwise branch
//   fuse     1x1, (rates + 1) C -> C
//   residual 3x3, C -> C, x <- ReLU(x + conv(x))
//   output   1x1, C -> 1
template <typename T>
struct DecoderLayers {
  T reduce_w, reduce_b;
  std::vector<T> aspp_w, aspp_b;
  T point_w, point_b;
  T fuse_w, fuse_b;
  std::vector<T> residual_w, residual_b;
  T output_w, output_b;

  // Visits every parameter in a fixed order with a stable name.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("reduce.weight", self.reduce_w);
    f("reduce.bias", self.reduce_b);
    for (std::size_t i = 0; i < self.aspp_w.size(); ++i) {
      f("aspp" + std::to_string(i) + ".weight", self.aspp_w[i]);
      f("aspp" + std::to_string(i) + ".bias", self.aspp_b[i]);
    }
    f("aspp_point.weight", self.point_w);
    f("aspp_point.bias", self.point_b);
    f("fuse.weight", self.fuse_w);
    f("fuse.bias", self.fuse_b);
    for (std::size_t i = 0; i < self.residual_w.size(); ++i) {
      f("residual" + std::to_string(i) + ".weight", self.residual_w[i]);
      f("residual" + std::to_string(i) + ".bias", self.residual_b[i]);
    }
    f("output.weight", self.output_w);
    f("output.bias", self.output_b);
  }
  template <typename F>
  void for_each(F&& f) { visit(*this, f); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, f); }

  bool operator==(const DecoderLayers&) const = default;
};

struct DecoderParams : DecoderLayers<Tensor> {
  std::vector<std::size_t> rates;

  std::size_t in_channels() const { return reduce_w.dim(1); }
  std::size_t channels() const { return reduce_w.dim(0); }
  std::size_t parameter_count() const;

  bool operator==(const DecoderParams&) const = default;
};

struct DecoderShape {
  std::size_t in_channels = 20;
  std::size_t channels = 8;
  std::vector<std::size_t> rates = {1, 2, 4};
  std::size_t residual_blocks = 3;
};

// Weights uniform in [-a, a], a = sqrt(6 / fan_in); biases zero. The output
// conv is zeroed when zero_output is set, so an untrained decoder predicts
// p = 0.5 everywhere.
DecoderParams init_decoder(const DecoderShape& shape, std::uint64_t seed,
                           bool zero_output = true);
DecoderParams zero_decoder(const DecoderShape& shape);

// Puts every parameter on the tape as a leaf.
DecoderLayers<Var> bind_decoder(Tape& tape, const DecoderParams& params);

// input [Cin, H, W] -> logits [1, out_h, out_w] (bilinear upsampled).
Var decoder_logits(const Var& input, const DecoderLayers<Var>& params,
                   std::span<const std::size_t> rates, std::size_t out_h,
                   std::size_t out_w);

struct Prediction {
  Tensor logits;       // [out_h, out_w]
  Tensor probability;  // sigmoid(logits)
  BinaryMask mask;     // probability >= 0.5
};

Prediction decode(const Tensor& input, const DecoderParams& params, std::size_t out_h,
                  std::size_t out_w);

// Stacks (vq0, vq1, four activation maps) along channels: [2C + 4, H, W].
Tensor decoder_input(const Tensor& vq0, const Tensor& vq1,
                     std::span<const Tensor> maps);

double bce_loss(const Tensor& probability, const BinaryMask& gt);

// p - lr * g.
Tensor sgd_step(const Tensor& param, const Tensor& grad, double lr);
DecoderParams sgd_step(const DecoderParams& params, const DecoderLayers<Tensor>& grads,
                       double lr);

void save_decoder(const DecoderParams& params, const std::filesystem::path& path);
DecoderParams load_decoder(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics

// |pred & gt| / |pred | gt|; 1 when the union is empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

struct MetricsReport {
  std::map<int, double> miou_per_class;
  double miou_mean = 0.0;
  double fb_iou = 0.0;

  std::string to_json() const;
};

// Per class: foreground intersections and unions are summed over that
// class's episodes, IoU = I / U. mIoU averages over classes. FB-IoU sums
// foreground and background counts over all episodes and averages the two
// IoUs.
MetricsReport evaluate_masks(std::span<const BinaryMask> preds,
                             std::span<const BinaryMask> gts,
                             std::span<const int> class_ids);
double miou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
            std::span<const int> class_ids);
double fb_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts);

}  // namespace sigcn
