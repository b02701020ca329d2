#include "offnadir/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "offnadir/interp.hpp"
#include "offnadir/tensor_io.hpp"

namespace offnadir {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kBlurBase = 0.5, kBlurPerDeg = 0.04;
constexpr double kNoiseBase = 0.01, kNoisePerDeg = 0.0015;
constexpr double kIntensityPerDeg = 0.003;
constexpr double kFacadeShade = 0.55;
constexpr int kBackgroundGrid = 8;

struct IntRect {
  int x0, y0, x1, y1;  // half-open
  bool empty() const { return x0 >= x1 || y0 >= y1; }
};

IntRect clip_rect(int x0, int y0, int x1, int y1, int size) {
  return {std::max(0, x0), std::max(0, y0), std::min(size, x1), std::min(size, y1)};
}

// Region swept by the roof rect while shifting horizontally from 0 to dx.
IntRect swept_rect(const Building& b, int dx, int size) {
  int lo = std::min(0, dx), hi = std::max(0, dx);
  return clip_rect(b.x0 + lo, b.y0, b.x0 + b.w + hi, b.y0 + b.h, size);
}

void fill_plane(Tensor& t, int plane_offset_ch, int size, const IntRect& r, float v) {
  if (r.empty()) return;
  float* base = t.data() + static_cast<size_t>(plane_offset_ch) * size * size;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) base[y * size + x] = v;
}

void paint_mask(Tensor& mask, const IntRect& r, int size) {
  if (r.empty()) return;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) mask[static_cast<size_t>(y) * size + x] = 1.0f;
}

void gaussian_blur_plane(float* p, int size, double sigma, std::vector<float>& tmp) {
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius < 1) return;
  std::vector<double> k(static_cast<size_t>(radius) + 1);
  double norm = 0.0;
  for (int i = 0; i <= radius; ++i) {
    k[static_cast<size_t>(i)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += (i == 0 ? 1.0 : 2.0) * k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= norm;
  tmp.resize(static_cast<size_t>(size) * size);
  auto clamp_idx = [size](int i) { return i < 0 ? 0 : (i >= size ? size - 1 : i); };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = k[0] * p[y * size + x];
      for (int i = 1; i <= radius; ++i)
        acc += k[static_cast<size_t>(i)] *
               (p[y * size + clamp_idx(x - i)] + p[y * size + clamp_idx(x + i)]);
      tmp[static_cast<size_t>(y) * size + x] = static_cast<float>(acc);
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = k[0] * tmp[static_cast<size_t>(y) * size + x];
      for (int i = 1; i <= radius; ++i)
        acc += k[static_cast<size_t>(i)] *
               (tmp[static_cast<size_t>(clamp_idx(y - i)) * size + x] +
                tmp[static_cast<size_t>(clamp_idx(y + i)) * size + x]);
      p[y * size + x] = static_cast<float>(acc);
    }
}

double fmt_tol(double a, double b) { return std::fabs(a - b); }

}  // namespace

const std::vector<double>& default_angles() {
  static const std::vector<double> a = {-32.5, -25.0, -7.8, 0.0, 10.0, 25.0, 32.0, 44.0, 54.0};
  return a;
}

double view_gsd(double angle_deg) {
  double c = std::cos(angle_deg * kDegToRad);
  return kNadirGsd / (c * c);
}

int roof_displacement_px(double height_m, double angle_deg) {
  return static_cast<int>(
      std::lround(kDisplacementPxPerM * height_m * std::tan(angle_deg * kDegToRad)));
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

SceneSpec make_scene(int scene_id, int size, Rng rng) {
  if (size < 32) throw std::invalid_argument("make_scene: size >= 32");
  SceneSpec sc;
  sc.scene_id = scene_id;
  sc.size = size;
  sc.world_seed = rng.next_u64();
  int want = 2 + static_cast<int>(rng.uniform_index(4));  // 2..5 buildings
  int attempts = 0;
  while (static_cast<int>(sc.buildings.size()) < want && attempts < 60) {
    ++attempts;
    Building b;
    b.w = 6 + static_cast<int>(rng.uniform_index(13));  // 6..18 px
    b.h = 6 + static_cast<int>(rng.uniform_index(13));
    b.x0 = 3 + static_cast<int>(rng.uniform_index(std::max(1, size - b.w - 8)));
    b.y0 = 2 + static_cast<int>(rng.uniform_index(std::max(1, size - b.h - 4)));
    // First building always tall so every scene shows real misalignment at
    // steep angles; the rest are a mix of low and tall.
    bool tall = sc.buildings.empty() || rng.uniform() < 0.5;
    b.height_m = tall ? 10.0 + rng.uniform() * 18.0 : rng.uniform() * 6.0;
    for (int c = 0; c < 4; ++c)
      b.albedo[static_cast<size_t>(c)] =
          static_cast<float>(0.55 + 0.30 * rng.uniform() - 0.04 + 0.08 * rng.uniform());
    bool clash = false;
    for (const auto& o : sc.buildings) {
      int ox0 = std::max(b.x0 - 2, o.x0 - 2), oy0 = std::max(b.y0 - 2, o.y0 - 2);
      int ox1 = std::min(b.x0 + b.w + 2, o.x0 + o.w + 2);
      int oy1 = std::min(b.y0 + b.h + 2, o.y0 + o.h + 2);
      if (ox0 < ox1 && oy0 < oy1) {
        clash = true;
        break;
      }
    }
    if (!clash) sc.buildings.push_back(b);
  }
  return sc;
}

RenderResult render_view(const SceneSpec& scene, double angle_deg, double gsd, Rng rng,
                         Tensor* clean_out) {
  if (std::fabs(angle_deg) >= 90.0)
    throw std::invalid_argument("render_view: angle must be inside (-90, 90)");
  if (gsd <= 0.0) throw std::invalid_argument("render_view: gsd must be positive");
  int S = scene.size;
  RenderResult r;
  r.image = Tensor({4, S, S});
  r.mask = Tensor({S, S});
  r.corrected_mask = Tensor({S, S});

  // Static scene texture, identical across viewing angles.
  Rng world(scene.world_seed);
  for (int c = 0; c < 4; ++c) {
    RngStream grid = world.next_stream();
    Tensor coarse({kBackgroundGrid, kBackgroundGrid});
    for (size_t i = 0; i < coarse.size(); ++i)
      coarse[i] = static_cast<float>(0.08 + 0.30 * grid.uniform_at(i));
    Tensor up = resize_bilinear(coarse, S, S);
    std::memcpy(r.image.data() + static_cast<size_t>(c) * S * S, up.data(),
                sizeof(float) * up.size());
  }
  RngStream fine = world.next_stream();
  for (size_t i = 0; i < r.image.size(); ++i)
    r.image[i] += static_cast<float>(-0.02 + 0.04 * fine.uniform_at(i));

  for (const auto& b : scene.buildings) {
    int dx = roof_displacement_px(b.height_m, angle_deg);
    IntRect sweep = swept_rect(b, dx, S);
    IntRect roof = clip_rect(b.x0 + dx, b.y0, b.x0 + b.w + dx, b.y0 + b.h, S);
    for (int c = 0; c < 4; ++c) {
      float a = b.albedo[static_cast<size_t>(c)];
      fill_plane(r.image, c, S, sweep, static_cast<float>(a * kFacadeShade));
      fill_plane(r.image, c, S, roof, a);
    }
    int dx_ref = roof_displacement_px(b.height_m, kReferenceAngleDeg);
    paint_mask(r.mask, swept_rect(b, dx_ref, S), S);
    paint_mask(r.corrected_mask, sweep, S);
  }
  if (clean_out) *clean_out = r.image;

  // View-dependent degradation.
  double dev = std::fabs(angle_deg - kReferenceAngleDeg);
  double sigma_b = kBlurBase + kBlurPerDeg * dev;
  std::vector<float> tmp;
  for (int c = 0; c < 4; ++c)
    gaussian_blur_plane(r.image.data() + static_cast<size_t>(c) * S * S, S, sigma_b, tmp);

  double factor = gsd / view_gsd(kReferenceAngleDeg);
  if (factor > 1.0) {
    int sz = std::max(4, static_cast<int>(std::lround(S / factor)));
    Tensor small = box_downsample(r.image, sz, sz);
    r.image = resize_bilinear(small, S, S);
  }

  float gain = static_cast<float>(1.0 - kIntensityPerDeg * dev);
  for (size_t i = 0; i < r.image.size(); ++i) r.image[i] *= gain;

  double sigma_n = kNoiseBase + kNoisePerDeg * dev;
  for (int c = 0; c < 4; ++c) {
    RngStream ns = rng.next_stream();
    float* p = r.image.data() + static_cast<size_t>(c) * S * S;
    for (size_t i = 0; i < static_cast<size_t>(S) * S; ++i)
      p[i] += static_cast<float>(sigma_n * ns.gaussian_at(i));
  }
  for (size_t i = 0; i < r.image.size(); ++i)
    r.image[i] = std::min(1.0f, std::max(0.0f, r.image[i]));
  return r;
}

std::vector<Split> split_scenes(int num_scenes, double train_frac, double val_frac, Rng rng) {
  if (num_scenes < 3)
    throw std::invalid_argument("split_scenes: fewer scenes than partitions");
  int n_val = std::max(1, static_cast<int>(std::lround(num_scenes * val_frac)));
  int n_test = std::max(1, static_cast<int>(std::lround(num_scenes * (1.0 - train_frac - val_frac))));
  int n_train = num_scenes - n_val - n_test;
  if (n_train < 1) throw std::invalid_argument("split_scenes: ratios leave no training scenes");
  std::vector<int> order(static_cast<size_t>(num_scenes));
  for (int i = 0; i < num_scenes; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = num_scenes - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i) + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<Split> split(static_cast<size_t>(num_scenes));
  for (int i = 0; i < num_scenes; ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    split[static_cast<size_t>(order[static_cast<size_t>(i)])] = s;
  }
  return split;
}

Manifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  const std::vector<double>& angles = cfg.angles.empty() ? default_angles() : cfg.angles;
  if (cfg.num_scenes < 3)
    throw std::invalid_argument("generate_dataset: fewer scenes than partitions");
  bool has_ref = false;
  for (double a : angles) {
    if (std::fabs(a) >= 90.0)
      throw std::invalid_argument("generate_dataset: angles must lie inside (-90, 90)");
    if (fmt_tol(a, kReferenceAngleDeg) < 1e-9) has_ref = true;
  }
  if (!has_ref)
    throw std::invalid_argument("generate_dataset: the reference angle -7.8 must be present");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  Rng root(cfg.seed);
  std::vector<Split> split = split_scenes(cfg.num_scenes, 0.6, 0.2, root.fork(2));

  Manifest m;
  m.root = out_dir;
  for (int si = 0; si < cfg.num_scenes; ++si) {
    SceneSpec scene = make_scene(si, cfg.image_size, root.fork(1).fork(static_cast<uint64_t>(si)));
    for (size_t ai = 0; ai < angles.size(); ++ai) {
      double ang = angles[ai];
      Rng view_rng = root.fork(3).fork(static_cast<uint64_t>(si)).fork(ai);
      RenderResult rv = render_view(scene, ang, view_gsd(ang), view_rng);
      char sid[32];
      std::snprintf(sid, sizeof(sid), "s%04d_a%02zu", si, ai);
      ManifestRow row;
      row.sample_id = sid;
      row.scene_id = si;
      row.split = split[static_cast<size_t>(si)];
      row.off_nadir_deg = ang;
      row.gsd = view_gsd(ang);
      row.image_path = std::string("images/") + sid + ".img.ten";
      row.mask_path = std::string("masks/") + sid + ".mask.ten";
      write_tensor(out_dir / row.image_path, rv.image);
      write_tensor(out_dir / row.mask_path, rv.mask);
      if (row.split == Split::test && std::fabs(ang) > 40.0) {
        row.corrected_mask_path = std::string("masks/") + sid + ".corr.ten";
        write_tensor(out_dir / row.corrected_mask_path, rv.corrected_mask);
      }
      m.rows.push_back(std::move(row));
    }
  }
  write_manifest(m);
  return m;
}

void write_manifest(const Manifest& m) {
  std::ofstream f(m.root / "manifest.tsv");
  if (!f) throw std::runtime_error("cannot write manifest under " + m.root.string());
  f << "# off-nadir building benchmark manifest v1\n";
  f << "# columns: sample_id\tscene_id\tsplit\toff_nadir_deg\tgsd\timage\tmask\tcorrected_mask\n";
  char buf[64];
  for (const auto& r : m.rows) {
    f << r.sample_id << '\t' << r.scene_id << '\t' << to_string(r.split) << '\t';
    std::snprintf(buf, sizeof(buf), "%.10g\t%.10g", r.off_nadir_deg, r.gsd);
    f << buf << '\t' << r.image_path << '\t' << r.mask_path << '\t'
      << (r.corrected_mask_path.empty() ? "-" : r.corrected_mask_path) << '\n';
  }
  if (!f) throw std::runtime_error("manifest write failed");
}

Manifest read_manifest(const std::filesystem::path& dir_or_file) {
  namespace fs = std::filesystem;
  fs::path file = dir_or_file;
  if (fs::is_directory(file)) file /= "manifest.tsv";
  std::ifstream f(file);
  if (!f) throw std::runtime_error("cannot open manifest: " + file.string());
  Manifest m;
  m.root = file.parent_path();
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string sid, scene, split, ang, gsd, img, mask, corr;
    if (!(std::getline(ss, sid, '\t') && std::getline(ss, scene, '\t') &&
          std::getline(ss, split, '\t') && std::getline(ss, ang, '\t') &&
          std::getline(ss, gsd, '\t') && std::getline(ss, img, '\t') &&
          std::getline(ss, mask, '\t') && std::getline(ss, corr)))
      throw std::runtime_error("manifest parse error at line " + std::to_string(lineno));
    ManifestRow r;
    r.sample_id = sid;
    r.scene_id = std::stoi(scene);
    r.split = parse_split(split);
    r.off_nadir_deg = std::stod(ang);
    r.gsd = std::stod(gsd);
    r.image_path = img;
    r.mask_path = mask;
    r.corrected_mask_path = corr == "-" ? "" : corr;
    m.rows.push_back(std::move(r));
  }
  if (m.rows.empty()) throw std::runtime_error("manifest has no data rows: " + file.string());
  return m;
}

MetaStats compute_meta_stats(const Manifest& m) {
  double sa = 0, sa2 = 0, sg = 0, sg2 = 0;
  int64_t n = 0;
  for (const auto& r : m.rows) {
    if (r.split != Split::train) continue;
    sa += r.off_nadir_deg;
    sa2 += r.off_nadir_deg * r.off_nadir_deg;
    sg += r.gsd;
    sg2 += r.gsd * r.gsd;
    ++n;
  }
  if (n == 0) throw std::runtime_error("compute_meta_stats: no training rows");
  MetaStats s;
  s.angle_mean = sa / n;
  s.angle_std = std::sqrt(std::max(0.0, sa2 / n - s.angle_mean * s.angle_mean));
  s.gsd_mean = sg / n;
  s.gsd_std = std::sqrt(std::max(0.0, sg2 / n - s.gsd_mean * s.gsd_mean));
  return s;
}

Tensor normalize_metadata(double angle_deg, double gsd, const MetaStats& stats) {
  if (stats.angle_std <= 0.0 || stats.gsd_std <= 0.0)
    throw std::runtime_error("normalize_metadata: degenerate statistics (zero spread)");
  Tensor t({2});
  t[0] = static_cast<float>((angle_deg - stats.angle_mean) / stats.angle_std);
  t[1] = static_cast<float>((gsd - stats.gsd_mean) / stats.gsd_std);
  return t;
}

}  // namespace offnadir
