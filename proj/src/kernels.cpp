#include "sigcn/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "sigcn/errors.hpp"

namespace sigcn::kernels {

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& w, std::size_t dilation) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0)) {
    throw ShapeError("conv2d: input " + shape_str(x.dims()) + " weight " +
                     shape_str(w.dims()));
  }
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw ShapeError("conv2d: kernel must be odd-sized, got " +
                     shape_str(w.dims()));
  }
  if (dilation == 0) throw ShapeError("conv2d: dilation must be >= 1");
}

// Output rows y for which y + off stays inside [0, n).
struct Span {
  std::size_t lo, hi;
};
Span valid_range(std::ptrdiff_t off, std::size_t n) {
  const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - off);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t dilation) {
  check_conv_shapes(x, w, dilation);
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.size() != cout) throw ShapeError("conv2d: bias length mismatch");
  const auto ph = static_cast<std::ptrdiff_t>(dilation * (kh - 1) / 2);
  const auto pw = static_cast<std::ptrdiff_t>(dilation * (kw - 1) / 2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);

  Tensor out({cout, h, wd});
  auto o = out.data();
  auto xv = x.data();
  auto wv = w.data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* oplane = &o[co * h * wd];
    std::fill(oplane, oplane + h * wd, b[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xplane = &xv[ci * h * wd];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(ky) * d - ph;
        const Span ys = valid_range(oy, h);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wt = wv[((co * cin + ci) * kh + ky) * kw + kx];
          if (wt == 0.0) continue;
          const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kx) * d - pw;
          const Span xs = valid_range(ox, wd);
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            double* orow = oplane + y * wd;
            const double* xrow = xplane + (y + oy) * wd + ox;
            for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) {
              orow[xx] += wt * xrow[xx];
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& gout, const Tensor& x,
                            const Tensor& w, std::size_t dilation) {
  check_conv_shapes(x, w, dilation);
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (gout.dims() != Shape{cout, h, wd}) {
    throw ShapeError("conv2d_backward: gradient " + shape_str(gout.dims()));
  }
  const auto ph = static_cast<std::ptrdiff_t>(dilation * (kh - 1) / 2);
  const auto pw = static_cast<std::ptrdiff_t>(dilation * (kw - 1) / 2);
  const auto d = static_cast<std::ptrdiff_t>(dilation);

  Conv2dGrads g{Tensor(x.dims()), Tensor(w.dims()), Tensor({cout})};
  auto gv = gout.data();
  auto xv = x.data();
  auto wv = w.data();
  auto dx = g.dx.data();
  auto dw = g.dw.data();
  for (std::size_t co = 0; co < cout; ++co) {
    const double* gplane = &gv[co * h * wd];
    double bsum = 0.0;
    for (std::size_t i = 0; i < h * wd; ++i) bsum += gplane[i];
    g.db[co] = bsum;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xplane = &xv[ci * h * wd];
      double* dxplane = &dx[ci * h * wd];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(ky) * d - ph;
        const Span ys = valid_range(oy, h);
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
          const double wt = wv[widx];
          const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(kx) * d - pw;
          const Span xs = valid_range(ox, wd);
          double acc = 0.0;
          for (std::size_t y = ys.lo; y < ys.hi; ++y) {
            const double* grow = gplane + y * wd;
            const double* xrow = xplane + (y + oy) * wd + ox;
            double* dxrow = dxplane + (y + oy) * wd + ox;
            for (std::size_t xx = xs.lo; xx < xs.hi; ++xx) {
              acc += grow[xx] * xrow[xx];
              dxrow[xx] += wt * grow[xx];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
  return g;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

Tap bilinear_tap(std::size_t dst, std::size_t in, std::size_t out) {
  if (out == 1 || in == 1) return {0, 0, 0.0};
  const double src = static_cast<double>(dst) * static_cast<double>(in - 1) /
                     static_cast<double>(out - 1);
  auto i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 >= in - 1) return {in - 1, in - 1, 0.0};
  return {i0, i0 + 1, src - static_cast<double>(i0)};
}

void check_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw ShapeError("bilinear_resize expects [C, H, W]");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: empty target");
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  check_resize(x, out_h, out_w);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return x;
  Tensor out({c, out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap ty = bilinear_tap(y, h, out_h);
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const Tap tx = bilinear_tap(xx, w, out_w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - tx.w1) * x.at(ch, ty.i0, tx.i0) +
                           tx.w1 * x.at(ch, ty.i0, tx.i1);
        const double bot = (1.0 - tx.w1) * x.at(ch, ty.i1, tx.i0) +
                           tx.w1 * x.at(ch, ty.i1, tx.i1);
        out.at(ch, y, xx) = (1.0 - ty.w1) * top + ty.w1 * bot;
      }
    }
  }
  return out;
}

Tensor bilinear_resize_backward(const Tensor& gout, const Shape& in_dims) {
  if (in_dims.size() != 3 || gout.rank() != 3 || gout.dim(0) != in_dims[0]) {
    throw ShapeError("bilinear_resize_backward: shape mismatch");
  }
  const std::size_t c = in_dims[0], h = in_dims[1], w = in_dims[2];
  const std::size_t out_h = gout.dim(1), out_w = gout.dim(2);
  if (h == out_h && w == out_w) return gout;
  Tensor dx(in_dims);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap ty = bilinear_tap(y, h, out_h);
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const Tap tx = bilinear_tap(xx, w, out_w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = gout.at(ch, y, xx);
        dx.at(ch, ty.i0, tx.i0) += (1.0 - ty.w1) * (1.0 - tx.w1) * g;
        dx.at(ch, ty.i0, tx.i1) += (1.0 - ty.w1) * tx.w1 * g;
        dx.at(ch, ty.i1, tx.i0) += ty.w1 * (1.0 - tx.w1) * g;
        dx.at(ch, ty.i1, tx.i1) += ty.w1 * tx.w1 * g;
      }
    }
  }
  return dx;
}

namespace {

void check_node_conv(const Tensor& x, const Tensor& theta) {
  if (x.rank() != 2 || theta.rank() != 2 || theta.dim(1) != x.dim(1)) {
    throw ShapeError("node_conv: nodes " + shape_str(x.dims()) + " kernel " +
                     shape_str(theta.dims()));
  }
}

}  // namespace

Tensor node_conv(const Tensor& x, const Tensor& theta) {
  check_node_conv(x, theta);
  const std::size_t n = x.dim(0), c = x.dim(1), k = theta.dim(0);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor out({n, c});
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
    const Span rows = valid_range(off, n);
    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
      const std::size_t src = static_cast<std::size_t>(
          static_cast<std::ptrdiff_t>(r) + off);
      for (std::size_t ch = 0; ch < c; ++ch) {
        out.at(r, ch) += theta.at(j, ch) * x.at(src, ch);
      }
    }
  }
  return out;
}

NodeConvGrads node_conv_backward(const Tensor& gout, const Tensor& x,
                                 const Tensor& theta) {
  check_node_conv(x, theta);
  if (gout.dims() != x.dims()) throw ShapeError("node_conv_backward: gradient shape");
  const std::size_t n = x.dim(0), c = x.dim(1), k = theta.dim(0);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  NodeConvGrads g{Tensor(x.dims()), Tensor(theta.dims())};
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - half;
    const Span rows = valid_range(off, n);
    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
      const std::size_t src = static_cast<std::size_t>(
          static_cast<std::ptrdiff_t>(r) + off);
      for (std::size_t ch = 0; ch < c; ++ch) {
        g.dx.at(src, ch) += theta.at(j, ch) * gout.at(r, ch);
        g.dtheta.at(j, ch) += gout.at(r, ch) * x.at(src, ch);
      }
    }
  }
  return g;
}

}  // namespace sigcn::kernels
