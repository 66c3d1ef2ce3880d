#include "sigcn/head.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sigcn/errors.hpp"
#include "sigcn/rng.hpp"

namespace sigcn {

using nlohmann::json;

std::size_t DecoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

namespace {

Tensor uniform_weight(SplitMix64& rng, std::size_t out, std::size_t in, std::size_t k) {
  Tensor w({out, in, k, k});
  const double a = std::sqrt(6.0 / static_cast<double>(in * k * k));
  for (auto& v : w.data()) v = rng.uniform(-a, a);
  return w;
}

DecoderParams allocate(const DecoderShape& shape) {
  const std::size_t c = shape.channels;
  if (c == 0 || shape.in_channels == 0 || shape.rates.empty()) {
    throw ConfigError("decoder needs positive widths and at least one ASPP rate");
  }
  for (auto r : shape.rates) {
    if (r == 0) throw ConfigError("ASPP rates must be >= 1");
  }
  DecoderParams p;
  p.rates = shape.rates;
  p.reduce_w = Tensor({c, shape.in_channels, 1, 1});
  p.reduce_b = Tensor({c});
  for (std::size_t i = 0; i < shape.rates.size(); ++i) {
    p.aspp_w.emplace_back(Shape{c, c, 3, 3});
    p.aspp_b.emplace_back(Shape{c});
  }
  p.point_w = Tensor({c, c, 1, 1});
  p.point_b = Tensor({c});
  p.fuse_w = Tensor({c, c * (shape.rates.size() + 1), 1, 1});
  p.fuse_b = Tensor({c});
  for (std::size_t i = 0; i < shape.residual_blocks; ++i) {
    p.residual_w.emplace_back(Shape{c, c, 3, 3});
    p.residual_b.emplace_back(Shape{c});
  }
  p.output_w = Tensor({1, c, 1, 1});
  p.output_b = Tensor({1});
  return p;
}

}  // namespace

DecoderParams zero_decoder(const DecoderShape& shape) { return allocate(shape); }

DecoderParams init_decoder(const DecoderShape& shape, std::uint64_t seed,
                           bool zero_output) {
  DecoderParams p = allocate(shape);
  SplitMix64 rng(seed);
  p.for_each([&](const std::string& name, Tensor& t) {
    if (t.rank() != 4) return;  // biases stay zero
    if (zero_output && name == "output.weight") return;
    t = uniform_weight(rng, t.dim(0), t.dim(1), t.dim(2));
  });
  return p;
}

DecoderLayers<Var> bind_decoder(Tape& tape, const DecoderParams& params) {
  DecoderLayers<Var> v;
  v.aspp_w.resize(params.aspp_w.size());
  v.aspp_b.resize(params.aspp_b.size());
  v.residual_w.resize(params.residual_w.size());
  v.residual_b.resize(params.residual_b.size());
  std::vector<Var*> slots;
  v.for_each([&](const std::string&, Var& slot) { slots.push_back(&slot); });
  std::size_t i = 0;
  params.for_each([&](const std::string&, const Tensor& t) { *slots[i++] = tape.leaf(t); });
  return v;
}

Var decoder_logits(const Var& input, const DecoderLayers<Var>& p,
                   std::span<const std::size_t> rates, std::size_t out_h,
                   std::size_t out_w) {
  const Shape& d = input.dims();
  if (d.size() != 3 || d[0] != p.reduce_w.dims()[1]) {
    throw ShapeError("decoder input " + shape_str(d) + " vs reduce conv " +
                     shape_str(p.reduce_w.dims()));
  }
  if (out_h < d[1] || out_w < d[2]) {
    throw ShapeError("decoder output size must be at least the feature size");
  }
  if (rates.size() != p.aspp_w.size()) throw ShapeError("ASPP rate count mismatch");

  Var x = relu(conv2d(instance_normalize(input), p.reduce_w, p.reduce_b));
  std::vector<Var> branches;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    branches.push_back(relu(conv2d(x, p.aspp_w[i], p.aspp_b[i], rates[i])));
  }
  branches.push_back(relu(conv2d(x, p.point_w, p.point_b)));
  x = relu(conv2d(concat(branches), p.fuse_w, p.fuse_b));
  for (std::size_t i = 0; i < p.residual_w.size(); ++i) {
    x = relu(add(x, conv2d(x, p.residual_w[i], p.residual_b[i], 1)));
  }
  const Var logits = conv2d(x, p.output_w, p.output_b);
  return bilinear_resize(logits, out_h, out_w);
}

Prediction decode(const Tensor& input, const DecoderParams& params, std::size_t out_h,
                  std::size_t out_w) {
  Tape tape;
  const auto vars = bind_decoder(tape, params);
  const Var logits = decoder_logits(tape.constant(input), vars, params.rates, out_h, out_w);
  const Var prob = sigmoid(logits);
  Tensor l = logits.value().reshaped({out_h, out_w});
  Tensor p = prob.value().reshaped({out_h, out_w});
  BinaryMask m = BinaryMask::threshold(p, 0.5);
  return {std::move(l), std::move(p), std::move(m)};
}

Tensor decoder_input(const Tensor& vq0, const Tensor& vq1, std::span<const Tensor> maps) {
  if (vq0.rank() != 3 || vq1.dims() != vq0.dims()) {
    throw ShapeError("decoder_input: instances " + shape_str(vq0.dims()) + " / " +
                     shape_str(vq1.dims()));
  }
  const std::size_t h = vq0.dim(1), w = vq0.dim(2);
  std::vector<double> data(vq0.vec());
  data.insert(data.end(), vq1.vec().begin(), vq1.vec().end());
  for (const auto& m : maps) {
    if (m.dims() != Shape{h, w}) {
      throw ShapeError("decoder_input: activation map " + shape_str(m.dims()));
    }
    data.insert(data.end(), m.vec().begin(), m.vec().end());
  }
  return Tensor({2 * vq0.dim(0) + maps.size(), h, w}, std::move(data));
}

double bce_loss(const Tensor& probability, const BinaryMask& gt) {
  Tape tape;
  return bce(tape.constant(probability), gt.tensor()).value().item();
}

Tensor sgd_step(const Tensor& param, const Tensor& grad, double lr) {
  if (param.dims() != grad.dims()) {
    throw ShapeError("sgd_step: param " + shape_str(param.dims()) + " vs grad " +
                     shape_str(grad.dims()));
  }
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  Tensor out = param;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= lr * grad[i];
  return out;
}

DecoderParams sgd_step(const DecoderParams& params, const DecoderLayers<Tensor>& grads,
                       double lr) {
  std::vector<const Tensor*> g;
  grads.for_each([&](const std::string&, const Tensor& t) { g.push_back(&t); });
  DecoderParams out = params;
  std::size_t i = 0;
  out.for_each([&](const std::string& name, Tensor& t) {
    if (i >= g.size()) throw ShapeError("sgd_step: missing gradient for " + name);
    t = sgd_step(t, *g[i++], lr);
  });
  if (i != g.size()) throw ShapeError("sgd_step: gradient count mismatch");
  return out;
}

void save_decoder(const DecoderParams& params, const std::filesystem::path& path) {
  json j;
  j["rates"] = params.rates;
  j["residual_blocks"] = params.residual_w.size();
  j["channels"] = params.channels();
  j["in_channels"] = params.in_channels();
  j["tensors"] = json::object();
  params.for_each([&](const std::string& name, const Tensor& t) {
    j["tensors"][name] = {{"dims", t.dims()}, {"data", t.vec()}};
  });
  std::ofstream f(path);
  if (!f) throw MissingFileError("cannot write decoder params: " + path.string());
  f << j.dump() << "\n";
}

DecoderParams load_decoder(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingFileError("cannot open decoder params: " + path.string());
  json j;
  try {
    f >> j;
    DecoderShape shape;
    shape.rates = j.at("rates").get<std::vector<std::size_t>>();
    shape.residual_blocks = j.at("residual_blocks").get<std::size_t>();
    shape.channels = j.at("channels").get<std::size_t>();
    shape.in_channels = j.at("in_channels").get<std::size_t>();
    DecoderParams p = allocate(shape);
    p.for_each([&](const std::string& name, Tensor& t) {
      const auto& e = j.at("tensors").at(name);
      Tensor loaded(e.at("dims").get<Shape>(), e.at("data").get<std::vector<double>>());
      if (loaded.dims() != t.dims()) {
        throw DimMismatchError(path.string() + ": " + name + " has dims " +
                               shape_str(loaded.dims()));
      }
      t = std::move(loaded);
    });
    return p;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

struct Counts {
  std::size_t inter = 0, uni = 0;
  double ratio() const {
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
};

Counts count(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.tensor().dims() != gt.tensor().dims()) {
    throw ShapeError("IoU: prediction " + shape_str(pred.tensor().dims()) + " vs truth " +
                     shape_str(gt.tensor().dims()));
  }
  Counts c;
  const std::size_t n = pred.tensor().size();
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred.at_flat(i), g = gt.at_flat(i);
    c.inter += p && g;
    c.uni += p || g;
  }
  return c;
}

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + ": " + std::to_string(a) + " vs " +
                     std::to_string(b) + " entries");
  }
  if (a == 0) throw InputError(std::string(what) + ": no episodes");
}

}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) { return count(pred, gt).ratio(); }

MetricsReport evaluate_masks(std::span<const BinaryMask> preds,
                             std::span<const BinaryMask> gts,
                             std::span<const int> class_ids) {
  check_lengths(preds.size(), gts.size(), "predictions vs ground truths");
  check_lengths(preds.size(), class_ids.size(), "predictions vs class ids");
  std::map<int, Counts> per_class;
  Counts fg, bg;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Counts f = count(preds[i], gts[i]);
    const Counts b = count(preds[i].complement(), gts[i].complement());
    per_class[class_ids[i]].inter += f.inter;
    per_class[class_ids[i]].uni += f.uni;
    fg.inter += f.inter;
    fg.uni += f.uni;
    bg.inter += b.inter;
    bg.uni += b.uni;
  }
  MetricsReport r;
  double total = 0.0;
  for (const auto& [cls, c] : per_class) {
    r.miou_per_class[cls] = c.ratio();
    total += c.ratio();
  }
  r.miou_mean = total / static_cast<double>(per_class.size());
  r.fb_iou = 0.5 * (fg.ratio() + bg.ratio());
  return r;
}

double miou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
            std::span<const int> class_ids) {
  return evaluate_masks(preds, gts, class_ids).miou_mean;
}

double fb_iou(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts) {
  const std::vector<int> ids(preds.size(), 0);
  return evaluate_masks(preds, gts, ids).fb_iou;
}

std::string MetricsReport::to_json() const {
  json j;
  j["miou_per_class"] = json::object();
  for (const auto& [cls, v] : miou_per_class) j["miou_per_class"][std::to_string(cls)] = v;
  j["miou_mean"] = miou_mean;
  j["fb_iou"] = fb_iou;
  return j.dump(2);
}

}  // namespace sigcn
