#include "sigcn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sigcn/errors.hpp"
#include "sigcn/kernels.hpp"

namespace sigcn {

const Tensor& Var::value() const {
  if (!tape_) throw LineageError("use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "const";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v, const char* what) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw LineageError(std::string(what) + " is not recorded on this tape");
  }
}

Var Tape::record(std::string op, std::vector<Var> inputs, ForwardFn forward,
                 BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  std::vector<const Tensor*> in;
  for (const auto& v : inputs) {
    check_owned(v, "op input");
    n.inputs.push_back(v.id_);
    in.push_back(&nodes_[v.id_].value);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  n.value = forward(in);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  grads_for_.reset();
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const {
  check_owned(v, "value");
  return nodes_[v.id_].value;
}

const std::string& Tape::op(const Var& v) const {
  check_owned(v, "op");
  return nodes_[v.id_].op;
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v, "requires_grad");
  return nodes_[v.id_].requires_grad;
}

void Tape::backward(std::size_t loss_id) {
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss_id] = Tensor::full(nodes_[loss_id].value.dims(), 1.0);
  for (std::size_t id = loss_id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty() || !n.backward) continue;
    std::vector<const Tensor*> in;
    for (auto i : n.inputs) in.push_back(&nodes_[i].value);
    std::vector<Tensor> gin = n.backward(grads_[id], in, n.value);
    for (std::size_t k = 0; k < n.inputs.size() && k < gin.size(); ++k) {
      const std::size_t src = n.inputs[k];
      if (gin[k].empty() || !nodes_[src].requires_grad) continue;
      if (grads_[src].empty()) {
        grads_[src] = std::move(gin[k]);
      } else {
        auto dst = grads_[src].data();
        auto add = gin[k].data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += add[e];
      }
    }
  }
  grads_for_ = loss_id;
}

Tensor Tape::grad(const Var& loss, const Var& wrt) {
  check_owned(loss, "loss");
  check_owned(wrt, "gradient target");
  if (!nodes_[loss.id_].value.is_scalar()) {
    throw ShapeError("grad: loss must be a scalar, got " +
                     shape_str(nodes_[loss.id_].value.dims()));
  }
  if (!nodes_[wrt.id_].requires_grad) {
    throw LineageError("grad: target is not a differentiable leaf lineage");
  }
  if (grads_for_ != loss.id_) backward(loss.id_);
  if (wrt.id_ >= grads_.size() || grads_[wrt.id_].empty()) {
    return Tensor(nodes_[wrt.id_].value.dims());
  }
  return grads_[wrt.id_];
}

bool Tape::replay_matches() const {
  std::vector<Tensor> replayed(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.forward) {
      replayed[id] = n.value;
      continue;
    }
    std::vector<const Tensor*> in;
    for (auto i : n.inputs) in.push_back(&replayed[i]);
    replayed[id] = n.forward(in);
    const auto a = replayed[id].data();
    const auto b = n.value.data();
    if (replayed[id].dims() != n.value.dims() ||
        std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::vector<std::uint8_t> Tape::activation_pattern() const {
  std::vector<std::uint8_t> pattern;
  for (const Node& n : nodes_) {
    if (n.op == "relu") {
      for (double v : nodes_[n.inputs[0]].value.data()) pattern.push_back(v > 0.0);
    } else if (n.op == "bce") {
      for (double v : nodes_[n.inputs[0]].value.data()) {
        pattern.push_back(v >= kBceClamp && v <= 1.0 - kBceClamp);
      }
    }
  }
  return pattern;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

Tape& same_tape(std::initializer_list<const Var*> vars) {
  Tape* t = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) throw LineageError("unbound Var passed to op");
    if (t && v->tape() != t) throw LineageError("op inputs live on different tapes");
    t = v->tape();
  }
  return *t;
}

void require_same_dims(const Var& a, const Var& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (auto& v : out.data()) v = f(v);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out = a;
  auto o = out.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(o[i], bv[i]);
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  require_same_dims(a, b, "add");
  return t.record(
      "add", {a, b},
      [](Tape::Inputs in) { return sigcn::add(*in[0], *in[1]); },
      [](const Tensor& g, Tape::Inputs, const Tensor&) {
        return std::vector<Tensor>{g, g};
      });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  require_same_dims(a, b, "sub");
  return t.record(
      "sub", {a, b},
      [](Tape::Inputs in) {
        return zip(*in[0], *in[1], [](double x, double y) { return x - y; });
      },
      [](const Tensor& g, Tape::Inputs, const Tensor&) {
        return std::vector<Tensor>{g, sigcn::scale(g, -1.0)};
      });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  require_same_dims(a, b, "mul");
  return t.record(
      "mul", {a, b},
      [](Tape::Inputs in) {
        return zip(*in[0], *in[1], [](double x, double y) { return x * y; });
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        auto times = [](double x, double y) { return x * y; };
        return std::vector<Tensor>{zip(g, *in[1], times), zip(g, *in[0], times)};
      });
}

Var scale(const Var& a, double factor) {
  Tape& t = same_tape({&a});
  return t.record(
      "scale", {a},
      [factor](Tape::Inputs in) { return sigcn::scale(*in[0], factor); },
      [factor](const Tensor& g, Tape::Inputs, const Tensor&) {
        return std::vector<Tensor>{sigcn::scale(g, factor)};
      });
}

Var relu(const Var& a) {
  Tape& t = same_tape({&a});
  return t.record(
      "relu", {a},
      [](Tape::Inputs in) {
        return map(*in[0], [](double x) { return x > 0.0 ? x : 0.0; });
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        return std::vector<Tensor>{
            zip(g, *in[0], [](double gv, double x) { return x > 0.0 ? gv : 0.0; })};
      });
}

Var sigmoid(const Var& a) {
  Tape& t = same_tape({&a});
  return t.record(
      "sigmoid", {a},
      [](Tape::Inputs in) {
        return map(*in[0], [](double x) {
          if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        });
      },
      [](const Tensor& g, Tape::Inputs, const Tensor& out) {
        return std::vector<Tensor>{
            zip(g, out, [](double gv, double s) { return gv * s * (1.0 - s); })};
      });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape({&a, &b});
  const auto& da = a.dims();
  const auto& db = b.dims();
  if (da.size() != 2 || db.size() != 2 || da[1] != db[0]) {
    throw ShapeError("matmul: " + shape_str(da) + " x " + shape_str(db));
  }
  return t.record(
      "matmul", {a, b},
      [](Tape::Inputs in) { return sigcn::matmul(*in[0], *in[1]); },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        return std::vector<Tensor>{sigcn::matmul(g, sigcn::transpose(*in[1])),
                                   sigcn::matmul(sigcn::transpose(*in[0]), g)};
      });
}

Var transpose(const Var& a) {
  Tape& t = same_tape({&a});
  if (a.dims().size() != 2) throw ShapeError("transpose expects rank 2");
  return t.record(
      "transpose", {a},
      [](Tape::Inputs in) { return sigcn::transpose(*in[0]); },
      [](const Tensor& g, Tape::Inputs, const Tensor&) {
        return std::vector<Tensor>{sigcn::transpose(g)};
      });
}

Var reshape(const Var& a, Shape dims) {
  Tape& t = same_tape({&a});
  if (shape_numel(dims) != a.value().size()) {
    throw ShapeError("cannot reshape " + shape_str(a.dims()) + " to " +
                     shape_str(dims));
  }
  return t.record(
      "reshape", {a},
      [dims](Tape::Inputs in) { return in[0]->reshaped(dims); },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        return std::vector<Tensor>{g.reshaped(in[0]->dims())};
      });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Tape& t = *parts[0].tape();
  const Shape& first = parts[0].dims();
  std::size_t lead = 0;
  for (const auto& p : parts) {
    same_tape({&parts[0], &p});
    const Shape& d = p.dims();
    if (d.size() != first.size() || !std::equal(d.begin() + 1, d.end(), first.begin() + 1)) {
      throw ShapeError("concat: " + shape_str(first) + " vs " + shape_str(d));
    }
    lead += d[0];
  }
  Shape out_dims = first;
  out_dims[0] = lead;
  return t.record(
      "concat", std::vector<Var>(parts.begin(), parts.end()),
      [out_dims](Tape::Inputs in) {
        std::vector<double> data;
        data.reserve(shape_numel(out_dims));
        for (const Tensor* p : in) data.insert(data.end(), p->vec().begin(), p->vec().end());
        return Tensor(out_dims, std::move(data));
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        std::vector<Tensor> out;
        std::size_t offset = 0;
        for (const Tensor* p : in) {
          std::vector<double> slice(g.vec().begin() + offset,
                                    g.vec().begin() + offset + p->size());
          offset += p->size();
          out.emplace_back(p->dims(), std::move(slice));
        }
        return out;
      });
}

Var sum(const Var& a) {
  Tape& t = same_tape({&a});
  return t.record(
      "sum", {a},
      [](Tape::Inputs in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        return std::vector<Tensor>{Tensor::full(in[0]->dims(), g[0])};
      });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_pool(const Var& a) {
  Tape& t = same_tape({&a});
  if (a.dims().size() != 3) throw ShapeError("mean_pool expects [C, H, W]");
  return t.record(
      "mean_pool", {a},
      [](Tape::Inputs in) {
        const Tensor& x = *in[0];
        const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
        Tensor out({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += x[ch * hw + i];
          out[ch] = s / static_cast<double>(hw);
        }
        return out;
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        const Tensor& x = *in[0];
        const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
        Tensor dx(x.dims());
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t i = 0; i < hw; ++i) {
            dx[ch * hw + i] = g[ch] / static_cast<double>(hw);
          }
        }
        return std::vector<Tensor>{dx};
      });
}

Var bilinear_resize(const Var& a, std::size_t out_h, std::size_t out_w) {
  Tape& t = same_tape({&a});
  if (a.dims().size() != 3) throw ShapeError("bilinear_resize expects [C, H, W]");
  return t.record(
      "bilinear_resize", {a},
      [out_h, out_w](Tape::Inputs in) {
        return kernels::bilinear_resize(*in[0], out_h, out_w);
      },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        return std::vector<Tensor>{kernels::bilinear_resize_backward(g, in[0]->dims())};
      });
}

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t dilation) {
  Tape& t = same_tape({&x, &w, &b});
  return t.record(
      "conv2d", {x, w, b},
      [dilation](Tape::Inputs in) {
        return kernels::conv2d(*in[0], *in[1], *in[2], dilation);
      },
      [dilation](const Tensor& g, Tape::Inputs in, const Tensor&) {
        auto grads = kernels::conv2d_backward(g, *in[0], *in[1], dilation);
        return std::vector<Tensor>{std::move(grads.dx), std::move(grads.dw),
                                   std::move(grads.db)};
      });
}

Var node_conv(const Var& x, const Var& theta) {
  Tape& t = same_tape({&x, &theta});
  return t.record(
      "node_conv", {x, theta},
      [](Tape::Inputs in) { return kernels::node_conv(*in[0], *in[1]); },
      [](const Tensor& g, Tape::Inputs in, const Tensor&) {
        auto grads = kernels::node_conv_backward(g, *in[0], *in[1]);
        return std::vector<Tensor>{std::move(grads.dx), std::move(grads.dtheta)};
      });
}

Var instance_normalize(const Var& x) {
  Tape& t = same_tape({&x});
  if (x.dims().size() != 3) throw ShapeError("instance_normalize expects [C, H, W]");
  struct Stats {
    double mean, inv_std;
  };
  auto stats = [](const Tensor& v, std::size_t ch, std::size_t plane) {
    double m = 0.0;
    for (std::size_t i = 0; i < plane; ++i) m += v[ch * plane + i];
    m /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = v[ch * plane + i] - m;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    return Stats{m, 1.0 / std::sqrt(var + kNormalizeEpsilon)};
  };
  return t.record(
      "instance_normalize", {x},
      [stats](Tape::Inputs in) {
        const Tensor& v = *in[0];
        const std::size_t plane = v.dim(1) * v.dim(2);
        Tensor out = v;
        for (std::size_t ch = 0; ch < v.dim(0); ++ch) {
          const Stats st = stats(v, ch, plane);
          for (std::size_t i = 0; i < plane; ++i) {
            out[ch * plane + i] = (v[ch * plane + i] - st.mean) * st.inv_std;
          }
        }
        return out;
      },
      [stats](const Tensor& g, Tape::Inputs in, const Tensor& out) {
        // dx = inv_std * (g - mean(g) - y * mean(g * y))
        const Tensor& v = *in[0];
        const std::size_t plane = v.dim(1) * v.dim(2);
        const double n = static_cast<double>(plane);
        Tensor dx(v.dims());
        for (std::size_t ch = 0; ch < v.dim(0); ++ch) {
          const Stats st = stats(v, ch, plane);
          double gm = 0.0, gy = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            gm += g[ch * plane + i];
            gy += g[ch * plane + i] * out[ch * plane + i];
          }
          gm /= n;
          gy /= n;
          for (std::size_t i = 0; i < plane; ++i) {
            dx[ch * plane + i] =
                st.inv_std * (g[ch * plane + i] - gm - out[ch * plane + i] * gy);
          }
        }
        return std::vector<Tensor>{dx};
      });
}

Var bce(const Var& prob, const Tensor& target) {
  Tape& t = same_tape({&prob});
  if (prob.dims() != target.dims()) {
    throw ShapeError("bce: prediction " + shape_str(prob.dims()) + " vs target " +
                     shape_str(target.dims()));
  }
  return t.record(
      "bce", {prob},
      [target](Tape::Inputs in) {
        const Tensor& p = *in[0];
        long double s = 0.0L;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double q = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
          s -= target[i] != 0.0 ? std::log(q) : std::log1p(-q);
        }
        return Tensor::scalar(static_cast<double>(s / static_cast<long double>(p.size())));
      },
      [target](const Tensor& g, Tape::Inputs in, const Tensor&) {
        const Tensor& p = *in[0];
        const double n = static_cast<double>(p.size());
        Tensor dp(p.dims());
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;
          dp[i] = g[0] * (-target[i] / p[i] + (1.0 - target[i]) / (1.0 - p[i])) / n;
        }
        return std::vector<Tensor>{dp};
      });
}

}  // namespace sigcn
