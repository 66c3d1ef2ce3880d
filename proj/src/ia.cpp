#include "sigcn/ia.hpp"

#include "sigcn/errors.hpp"

namespace sigcn {

Tensor support_instance(const Tensor& foreground, std::size_t s) {
  if (s < 1) throw ConfigError("support instance size s must be >= 1");
  if (foreground.rank() != 2) throw ShapeError("support_instance expects [N_fg, C]");
  const std::size_t n = foreground.dim(0), c = foreground.dim(1), cells = s * s;
  if (n == 0) throw ForegroundEmptyError("support_instance: empty foreground");

  std::vector<double> global(c, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) global[ch] += foreground.at(r, ch);
  }
  for (auto& v : global) v /= static_cast<double>(n);

  Tensor out({c, s, s});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const std::size_t lo = cell * n / cells, hi = (cell + 1) * n / cells;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double v = global[ch];
      if (hi > lo) {
        double acc = 0.0;
        for (std::size_t r = lo; r < hi; ++r) acc += foreground.at(r, ch);
        v = acc / static_cast<double>(hi - lo);
      }
      out[ch * cells + cell] = v;
    }
  }
  return out;
}

Tensor support_instance(std::span<const Tensor> foregrounds, std::size_t s) {
  if (foregrounds.empty()) throw ForegroundEmptyError("support_instance: no shots");
  Tensor acc = support_instance(foregrounds[0], s);
  for (std::size_t k = 1; k < foregrounds.size(); ++k) {
    acc = add(acc, support_instance(foregrounds[k], s));
  }
  return scale(acc, 1.0 / static_cast<double>(foregrounds.size()));
}

namespace {

Var vectorize(const Var& v) {
  const Shape& d = v.dims();
  return reshape(v, {d[0], shape_numel(d) / d[0]});
}

Var gram(const Var& v) {
  const Var r = vectorize(v);
  return matmul(r, transpose(r));
}

}  // namespace

AssociatedInstances associate(const Var& vq0, const Var& vq1, const Var& vs,
                              const AssociationConfig& cfg) {
  const Shape& q = vq0.dims();
  if (q.size() != 3 || vq1.dims() != q || vs.dims().size() != 3 || vs.dims()[0] != q[0]) {
    throw ShapeError("associate: query " + shape_str(q) + "/" + shape_str(vq1.dims()) +
                     ", support " + shape_str(vs.dims()));
  }
  if (cfg.alpha < 0.0 || cfg.beta < 0.0) throw ConfigError("alpha and beta must be >= 0");

  const Var gs = gram(vs);
  const Var g0 = gram(vq0);
  const Var g1 = gram(vq1);
  const Var r0 = vectorize(vq0);
  const Var r1 = vectorize(vq1);

  auto update = [&](const Var& self, const Var& r_self, const Var& g_peer) {
    const Var m_support = matmul(gs, r_self);
    const Var m_peer = matmul(g_peer, r_self);
    const Var context = add(scale(m_support, cfg.alpha), scale(m_peer, cfg.beta));
    return scale(add(self, reshape(context, q)), 0.5);
  };
  return {update(vq0, r0, g1), update(vq1, r1, g0)};
}

std::pair<Tensor, Tensor> associate(const Tensor& vq0, const Tensor& vq1,
                                    const Tensor& vs, const AssociationConfig& cfg) {
  Tape tape;
  const auto out = associate(tape.constant(vq0), tape.constant(vq1), tape.constant(vs), cfg);
  return {out.query0.value(), out.query1.value()};
}

}  // namespace sigcn
