#include "sigcn/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sigcn/errors.hpp"
#include "sigcn/rng.hpp"
#include "sigcn/tensor_io.hpp"

namespace sigcn {

namespace fs = std::filesystem;
using nlohmann::json;

BinaryMask::BinaryMask(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 2) {
    throw ShapeError("mask must be H x W, got " + shape_str(values_.dims()));
  }
  for (double v : values_.data()) {
    if (v != 0.0 && v != 1.0) throw FormatError("mask values must be 0 or 1");
  }
}

BinaryMask BinaryMask::zeros(std::size_t h, std::size_t w) {
  return BinaryMask(Tensor({h, w}));
}

BinaryMask BinaryMask::threshold(const Tensor& map, double threshold) {
  Tensor t = map;
  for (auto& v : t.data()) v = v >= threshold ? 1.0 : 0.0;
  return BinaryMask(std::move(t));
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (double v : values_.data()) n += v != 0.0;
  return n;
}

BinaryMask BinaryMask::complement() const {
  Tensor t = values_;
  for (auto& v : t.data()) v = 1.0 - v;
  return BinaryMask(std::move(t));
}

namespace {

void check_feature_mask(const Tensor& f, const BinaryMask& m, const char* op) {
  if (f.rank() != 3 || f.dim(1) != m.height() || f.dim(2) != m.width()) {
    throw ShapeError(std::string(op) + ": features " + shape_str(f.dims()) +
                     " vs mask " + shape_str(m.tensor().dims()));
  }
  if (m.count() == 0) throw ForegroundEmptyError(std::string(op) + ": mask has no foreground");
}

void check_level(const Tensor& f, const Shape& ref, const std::string& what) {
  if (f.dims() != ref) {
    throw DimMismatchError(what + " has dims " + shape_str(f.dims()) +
                           ", expected " + shape_str(ref));
  }
}

}  // namespace

void Episode::validate() const {
  if (shots.empty()) throw InputError("episode needs at least one support shot");
  const Shape& ref = query.feat_mid.dims();
  if (ref.size() != 3) throw DimMismatchError("query features must be [C, H, W]");
  const Shape mask_dims{ref[1], ref[2]};
  check_level(query.feat_high, ref, "query high-level features");
  if (query.mask) check_level(query.mask->tensor(), mask_dims, "query mask");
  for (std::size_t k = 0; k < shots.size(); ++k) {
    const std::string name = "shot " + std::to_string(k);
    check_level(shots[k].feat_mid, ref, name + " mid-level features");
    check_level(shots[k].feat_high, ref, name + " high-level features");
    check_level(shots[k].mask.tensor(), mask_dims, name + " mask");
    if (shots[k].mask.count() == 0) {
      throw ForegroundEmptyError(name + " mask has no foreground");
    }
  }
}

Tensor masked_average_pool(const Tensor& f, const BinaryMask& m) {
  check_feature_mask(f, m, "masked_average_pool");
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      if (m.at_flat(p)) s += f[ch * hw + p];
    }
    out[ch] = s;
  }
  return scale(out, 1.0 / static_cast<double>(m.count()));
}

Tensor foreground_sequence(const Tensor& f, const BinaryMask& m) {
  check_feature_mask(f, m, "foreground_sequence");
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Tensor out({m.count(), c});
  std::size_t row = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    if (!m.at_flat(p)) continue;
    for (std::size_t ch = 0; ch < c; ++ch) out.at(row, ch) = f[ch * hw + p];
    ++row;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic episodes

void GeneratorConfig::validate() const {
  if (channels < 2 || height < 2 || width < 2) {
    throw ConfigError("generator needs C, H, W >= 2");
  }
  if (shots < 1) throw ConfigError("generator needs K >= 1 shots");
  if (!(variation >= 0.0) || !std::isfinite(variation)) {
    throw ConfigError("variation must be finite and >= 0");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be >= 0");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
}

namespace {

Tensor normal_vector(SplitMix64& rng, std::size_t n) {
  Tensor v({n});
  for (auto& x : v.data()) x = rng.normal();
  return v;
}

// Region means are half-normal so rendered features look like rectified
// backbone activations (non-negative).
Tensor mean_vector(SplitMix64& rng, std::size_t n) {
  Tensor v = normal_vector(rng, n);
  for (auto& x : v.data()) x = std::abs(x);
  return v;
}

Tensor unit_vector(SplitMix64& rng, std::size_t n) {
  for (;;) {
    Tensor v = normal_vector(rng, n);
    double norm = 0.0;
    for (double x : v.data()) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 1e-12) return scale(v, 1.0 / norm);
  }
}

// Axis-aligned ellipse; falls back to the centre pixel if it covers nothing.
BinaryMask ellipse_mask(SplitMix64& rng, std::size_t h, std::size_t w) {
  const double fh = static_cast<double>(h), fw = static_cast<double>(w);
  const double cy = rng.uniform(0.3, 0.7) * fh;
  const double cx = rng.uniform(0.3, 0.7) * fw;
  const double ry = rng.uniform(0.15, 0.35) * fh;
  const double rx = rng.uniform(0.15, 0.35) * fw;
  Tensor t({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double dy = (static_cast<double>(i) + 0.5 - cy) / ry;
      const double dx = (static_cast<double>(j) + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) t.at(i, j) = 1.0;
    }
  }
  BinaryMask m(std::move(t));
  if (m.count() == 0) {
    Tensor fix = m.tensor();
    fix.at(std::min(h - 1, static_cast<std::size_t>(cy)),
           std::min(w - 1, static_cast<std::size_t>(cx))) = 1.0;
    m = BinaryMask(std::move(fix));
  }
  return m;
}

Tensor render(SplitMix64& rng, const BinaryMask& m, const Tensor& fg,
              const Tensor& bg, double noise) {
  const std::size_t c = fg.size(), h = m.height(), w = m.width();
  Tensor f({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double base = m(i, j) ? fg[ch] : bg[ch];
        f.at(ch, i, j) = std::max(0.0, base + noise * rng.normal());
      }
    }
  }
  return round_to_f32(f);
}

}  // namespace

GeneratedEpisode generate(std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  SplitMix64 rng(seed);
  GeneratedEpisode out;
  Episode& ep = out.episode;
  ep.class_id = static_cast<int>(rng.next() % static_cast<std::uint64_t>(cfg.num_classes));

  // Class appearance is shared by every episode of the class.
  SplitMix64 class_rng(0x5151C0DEULL + static_cast<std::uint64_t>(ep.class_id));
  Tensor fg_mean[2], bg_mean[2], query_fg[2];
  for (int level = 0; level < 2; ++level) {
    fg_mean[level] = mean_vector(class_rng, cfg.channels);
    bg_mean[level] = mean_vector(rng, cfg.channels);
    query_fg[level] = add(fg_mean[level],
                          scale(unit_vector(rng, cfg.channels), cfg.variation));
    out.support_fg_mean[level] = fg_mean[level];
    out.query_fg_mean[level] = query_fg[level];
  }

  for (std::size_t k = 0; k < cfg.shots; ++k) {
    BinaryMask m = ellipse_mask(rng, cfg.height, cfg.width);
    Tensor mid = render(rng, m, fg_mean[0], bg_mean[0], cfg.noise);
    Tensor high = render(rng, m, fg_mean[1], bg_mean[1], cfg.noise);
    ep.shots.push_back({std::move(mid), std::move(high), std::move(m)});
  }
  BinaryMask qm = ellipse_mask(rng, cfg.height, cfg.width);
  ep.query.feat_mid = render(rng, qm, query_fg[0], bg_mean[0], cfg.noise);
  ep.query.feat_high = render(rng, qm, query_fg[1], bg_mean[1], cfg.noise);
  ep.query.mask = std::move(qm);
  return out;
}

Episode generate_episode(std::uint64_t seed, const GeneratorConfig& cfg) {
  return generate(seed, cfg).episode;
}

// ---------------------------------------------------------------------------
// Manifest I/O

void save_episode(const Episode& ep, const fs::path& dir) {
  ep.validate();
  fs::create_directories(dir);
  json manifest;
  manifest["class_id"] = ep.class_id;
  manifest["shots"] = json::array();
  for (std::size_t k = 0; k < ep.shots.size(); ++k) {
    const std::string stem = "shot" + std::to_string(k);
    write_tensor(dir / (stem + "_mid.stnsr"), ep.shots[k].feat_mid);
    write_tensor(dir / (stem + "_high.stnsr"), ep.shots[k].feat_high);
    write_tensor(dir / (stem + "_mask.stnsr"), ep.shots[k].mask.tensor());
    manifest["shots"].push_back({{"feat_mid", stem + "_mid.stnsr"},
                                 {"feat_high", stem + "_high.stnsr"},
                                 {"mask", stem + "_mask.stnsr"}});
  }
  write_tensor(dir / "query_mid.stnsr", ep.query.feat_mid);
  write_tensor(dir / "query_high.stnsr", ep.query.feat_high);
  json q = {{"feat_mid", "query_mid.stnsr"}, {"feat_high", "query_high.stnsr"}};
  if (ep.query.mask) {
    write_tensor(dir / "query_mask.stnsr", ep.query.mask->tensor());
    q["mask"] = "query_mask.stnsr";
  }
  manifest["query"] = q;
  std::ofstream f(dir / "manifest.json");
  if (!f) throw MissingFileError("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

namespace {

std::string field(const json& obj, const char* key, const fs::path& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
    throw FormatError(where.string() + ": missing string field '" + key + "'");
  }
  return obj[key].get<std::string>();
}

}  // namespace

Episode load_episode(const fs::path& manifest_path) {
  fs::path manifest_file = manifest_path;
  if (fs::is_directory(manifest_file)) manifest_file /= "manifest.json";
  std::ifstream f(manifest_file);
  if (!f) throw MissingFileError("cannot open manifest: " + manifest_file.string());
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(manifest_file.string() + ": " + e.what());
  }
  const fs::path base = manifest_file.parent_path();
  if (!manifest.is_object() || !manifest.contains("shots") ||
      !manifest["shots"].is_array() || !manifest.contains("query")) {
    throw FormatError(manifest_file.string() + ": expected {class_id, shots, query}");
  }

  Episode ep;
  ep.class_id = manifest.value("class_id", 0);
  for (const auto& s : manifest["shots"]) {
    ep.shots.push_back({read_tensor(base / field(s, "feat_mid", manifest_file)),
                        read_tensor(base / field(s, "feat_high", manifest_file)),
                        BinaryMask(read_tensor(base / field(s, "mask", manifest_file)))});
  }
  const json& q = manifest["query"];
  ep.query.feat_mid = read_tensor(base / field(q, "feat_mid", manifest_file));
  ep.query.feat_high = read_tensor(base / field(q, "feat_high", manifest_file));
  if (q.contains("mask") && !q["mask"].is_null()) {
    ep.query.mask = BinaryMask(read_tensor(base / field(q, "mask", manifest_file)));
  }
  ep.validate();
  return ep;
}

}  // namespace sigcn
