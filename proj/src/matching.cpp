#include "sigcn/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sigcn/errors.hpp"

namespace sigcn {

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kNormEpsilon || nb < kNormEpsilon) return 0.0;
  return dot / (na * nb);
}

Tensor min_max_normalize(const Tensor& raw) {
  const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
  const double mn = *lo, mx = *hi;
  Tensor out(raw.dims());
  if (!(mx > mn)) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mn) / (mx - mn);
  return out;
}

namespace {

void check_inputs(const Tensor& fs, const BinaryMask& ms, const Tensor& fq) {
  if (fq.rank() != 3 || fs.dims() != fq.dims() || ms.height() != fq.dim(1) ||
      ms.width() != fq.dim(2)) {
    throw ShapeError("matching: support " + shape_str(fs.dims()) + ", mask " +
                     shape_str(ms.tensor().dims()) + ", query " + shape_str(fq.dims()));
  }
  if (ms.count() == 0) throw ForegroundEmptyError("matching: support mask has no foreground");
}

// Pixel vectors as rows: [HW, C].
std::vector<std::vector<double>> pixel_rows(const Tensor& f) {
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  std::vector<std::vector<double>> rows(hw, std::vector<double>(c));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) rows[p][ch] = f[ch * hw + p];
  }
  return rows;
}

}  // namespace

Tensor pixel_scores(const Tensor& fs, const BinaryMask& ms, const Tensor& fq) {
  check_inputs(fs, ms, fq);
  const auto support = pixel_rows(fs);
  const auto query = pixel_rows(fq);
  Tensor raw({fq.dim(1), fq.dim(2)});
  for (std::size_t p = 0; p < query.size(); ++p) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < support.size(); ++s) {
      if (ms.at_flat(s)) best = std::max(best, cosine(query[p], support[s]));
    }
    raw[p] = best;
  }
  return raw;
}

CellRange grid_cell(std::size_t index, std::size_t extent, std::size_t cells) {
  return {index * extent / cells, (index + 1) * extent / cells};
}

Tensor region_scores(const Tensor& fs, const BinaryMask& ms, const Tensor& fq,
                     std::size_t grid) {
  check_inputs(fs, ms, fq);
  const std::size_t c = fq.dim(0), h = fq.dim(1), w = fq.dim(2);
  if (grid < 1 || grid > std::min(h, w)) {
    throw ShapeError("region grid must be in [1, min(H, W)], got " + std::to_string(grid));
  }

  std::vector<std::vector<double>> query_cells, support_cells;
  for (std::size_t gy = 0; gy < grid; ++gy) {
    const CellRange ry = grid_cell(gy, h, grid);
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const CellRange rx = grid_cell(gx, w, grid);
      std::vector<double> q(c, 0.0), s(c, 0.0);
      std::size_t n_fg = 0;
      for (std::size_t i = ry.begin; i < ry.end; ++i) {
        for (std::size_t j = rx.begin; j < rx.end; ++j) {
          const bool fg = ms(i, j);
          n_fg += fg;
          for (std::size_t ch = 0; ch < c; ++ch) {
            q[ch] += fq.at(ch, i, j);
            if (fg) s[ch] += fs.at(ch, i, j);
          }
        }
      }
      const double area = static_cast<double>((ry.end - ry.begin) * (rx.end - rx.begin));
      for (auto& v : q) v /= area;
      query_cells.push_back(std::move(q));
      if (n_fg > 0) {
        for (auto& v : s) v /= static_cast<double>(n_fg);
        support_cells.push_back(std::move(s));
      }
    }
  }
  if (support_cells.empty()) {
    throw ForegroundEmptyError("region matching: every support cell is background");
  }

  Tensor raw({h, w});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    const CellRange ry = grid_cell(gy, h, grid);
    for (std::size_t gx = 0; gx < grid; ++gx) {
      const CellRange rx = grid_cell(gx, w, grid);
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& s : support_cells) {
        best = std::max(best, cosine(query_cells[gy * grid + gx], s));
      }
      for (std::size_t i = ry.begin; i < ry.end; ++i) {
        for (std::size_t j = rx.begin; j < rx.end; ++j) raw.at(i, j) = best;
      }
    }
  }
  return raw;
}

namespace {

template <typename Score>
Tensor averaged(std::span<const Tensor> fs, std::span<const BinaryMask> ms, Score score) {
  if (fs.empty() || fs.size() != ms.size()) {
    throw ShapeError("matching: need one mask per support shot");
  }
  Tensor acc = score(fs[0], ms[0]);
  for (std::size_t k = 1; k < fs.size(); ++k) acc = add(acc, score(fs[k], ms[k]));
  return scale(acc, 1.0 / static_cast<double>(fs.size()));
}

}  // namespace

ActivationMap pixel_activation(std::span<const Tensor> fs, std::span<const BinaryMask> ms,
                               const Tensor& fq, Level level) {
  Tensor raw = averaged(fs, ms, [&](const Tensor& f, const BinaryMask& m) {
    return pixel_scores(f, m, fq);
  });
  return {min_max_normalize(raw), level, MatchMethod::kPixel};
}

ActivationMap region_activation(std::span<const Tensor> fs, std::span<const BinaryMask> ms,
                                const Tensor& fq, std::size_t grid, Level level) {
  Tensor raw = averaged(fs, ms, [&](const Tensor& f, const BinaryMask& m) {
    return region_scores(f, m, fq, grid);
  });
  return {min_max_normalize(raw), level, MatchMethod::kRegion};
}

ActivationMap pixel_activation(const Tensor& fs, const BinaryMask& ms, const Tensor& fq) {
  return pixel_activation(std::span(&fs, 1), std::span(&ms, 1), fq);
}

ActivationMap region_activation(const Tensor& fs, const BinaryMask& ms, const Tensor& fq,
                                std::size_t grid) {
  return region_activation(std::span(&fs, 1), std::span(&ms, 1), fq, grid);
}

ActivationMaps compute_activation_maps(const Episode& ep, std::size_t grid) {
  std::vector<Tensor> mid, high;
  std::vector<BinaryMask> masks;
  for (const auto& s : ep.shots) {
    mid.push_back(s.feat_mid);
    high.push_back(s.feat_high);
    masks.push_back(s.mask);
  }
  return {pixel_activation(mid, masks, ep.query.feat_mid, Level::kMid),
          region_activation(mid, masks, ep.query.feat_mid, grid, Level::kMid),
          pixel_activation(high, masks, ep.query.feat_high, Level::kHigh),
          region_activation(high, masks, ep.query.feat_high, grid, Level::kHigh)};
}

}  // namespace sigcn
