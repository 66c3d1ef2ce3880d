#include "sigcn/pipeline.hpp"

#include <tuple>

#include "sigcn/errors.hpp"
#include "sigcn/ia.hpp"
#include "sigcn/sigr.hpp"

namespace sigcn {

PipelineOutputs run_pipeline(const Episode& ep, const Config& cfg, Variant variant) {
  ep.validate();
  cfg.validate();
  PipelineOutputs out;
  out.maps = compute_activation_maps(ep, cfg.region_grid);
  const Tensor maps[] = {out.maps.mid_pixel.values, out.maps.mid_region.values,
                         out.maps.high_pixel.values, out.maps.high_region.values};

  if (variant == Variant::kAblated) {
    out.query0 = ep.query.feat_mid;
    out.query1 = ep.query.feat_high;
    out.decoder_input = decoder_input(out.query0, out.query1, maps);
    return out;
  }

  std::vector<Tensor> mid, high, foregrounds;
  std::vector<BinaryMask> masks;
  for (const auto& s : ep.shots) {
    mid.push_back(s.feat_mid);
    high.push_back(s.feat_high);
    masks.push_back(s.mask);
    foregrounds.push_back(foreground_sequence(s.feat_high, s.mask));
  }
  const SigrConfig sigr = cfg.sigr();
  out.instance_mid = run_branch(ep.query.feat_mid, out.maps.mid_region, mid, masks, sigr);
  out.instance_high = run_branch(ep.query.feat_high, out.maps.high_region, high, masks, sigr);
  out.support_instance = support_instance(foregrounds, cfg.instance_size);
  std::tie(out.query0, out.query1) = associate(out.instance_mid, out.instance_high,
                                               out.support_instance, cfg.association());
  out.decoder_input = decoder_input(out.query0, out.query1, maps);
  return out;
}

Prediction predict(const Episode& ep, const PipelineOutputs& features,
                   const DecoderParams& params) {
  std::size_t h = ep.height(), w = ep.width();
  if (ep.query.mask) {
    h = ep.query.mask->height();
    w = ep.query.mask->width();
  }
  return decode(features.decoder_input, params, h, w);
}

Var decoder_loss(const Var& input, const DecoderLayers<Var>& params,
                 std::span<const std::size_t> rates, const BinaryMask& gt) {
  const Var logits = decoder_logits(input, params, rates, gt.height(), gt.width());
  const Var prob = reshape(sigmoid(logits), {gt.height(), gt.width()});
  return bce(prob, gt.tensor());
}

TrainResult overfit(const Tensor& input, const BinaryMask& gt, DecoderParams params,
                    std::size_t steps, double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  TrainResult result;
  for (std::size_t step = 0;; ++step) {
    Tape tape;
    const auto vars = bind_decoder(tape, params);
    const Var loss = decoder_loss(tape.constant(input), vars, params.rates, gt);
    result.losses.push_back(loss.value().item());
    if (step == steps) break;
    DecoderLayers<Tensor> grads;
    grads.aspp_w.resize(params.aspp_w.size());
    grads.aspp_b.resize(params.aspp_b.size());
    grads.residual_w.resize(params.residual_w.size());
    grads.residual_b.resize(params.residual_b.size());
    std::vector<Tensor*> slots;
    grads.for_each([&](const std::string&, Tensor& t) { slots.push_back(&t); });
    std::size_t i = 0;
    vars.for_each([&](const std::string&, const Var& v) { *slots[i++] = tape.grad(loss, v); });
    params = sgd_step(params, grads, lr);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace sigcn
