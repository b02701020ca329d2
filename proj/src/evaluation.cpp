#include "offnadir/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "offnadir/image_io.hpp"
#include "offnadir/interp.hpp"
#include "offnadir/tensor_io.hpp"

namespace offnadir {

namespace {

std::string fmt(double v, const char* f = "%.12g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Tensor load_gt(const Manifest& man, const ManifestRow& row, bool use_corrected) {
  const std::string& path = (use_corrected && !row.corrected_mask_path.empty())
                                ? row.corrected_mask_path
                                : row.mask_path;
  return read_tensor_f32(man.root / path);
}

// Min-max quantization to bytes; a constant map becomes all zeros.
std::vector<uint8_t> quantize_map(const Tensor& t, double* min_out, double* max_out) {
  double mn = t[0], mx = t[0];
  for (size_t i = 0; i < t.size(); ++i) {
    mn = std::min(mn, static_cast<double>(t[i]));
    mx = std::max(mx, static_cast<double>(t[i]));
  }
  std::vector<uint8_t> pix(t.size(), 0);
  if (mx > mn) {
    double scale = 255.0 / (mx - mn);
    for (size_t i = 0; i < t.size(); ++i)
      pix[i] = static_cast<uint8_t>(std::lround((static_cast<double>(t[i]) - mn) * scale));
  }
  *min_out = mn;
  *max_out = mx;
  return pix;
}

Tensor channel_mean(const Tensor& t) {  // [C,H,W] -> [H,W]
  if (t.rank() != 3) throw std::invalid_argument("channel_mean: rank-3 input");
  int C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out({H, W});
  for (int c = 0; c < C; ++c) {
    const float* p = t.data() + static_cast<size_t>(c) * H * W;
    for (size_t i = 0; i < static_cast<size_t>(H) * W; ++i)
      out[i] += p[i] / static_cast<float>(C);
  }
  return out;
}

}  // namespace

const char* to_string(AngleBin b) {
  switch (b) {
    case AngleBin::Nadir: return "Nadir";
    case AngleBin::OffNadir: return "OffNadir";
    case AngleBin::VeryOffNadir: return "VeryOffNadir";
  }
  return "?";
}

AngleBin bin_angle(double theta_deg) {
  double a = std::fabs(theta_deg);
  if (a >= 90.0) throw std::invalid_argument("bin_angle: |theta| must be < 90");
  if (a <= 25.0) return AngleBin::Nadir;
  if (a < 40.0) return AngleBin::OffNadir;
  return AngleBin::VeryOffNadir;
}

double f1_score(const Tensor& prob_map, const Tensor& gt, double threshold) {
  if (!prob_map.same_shape(gt))
    throw std::invalid_argument("f1_score: shape mismatch " + shape_str(prob_map.shape()) +
                                " vs " + shape_str(gt.shape()));
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    float y = gt[i];
    if (y != 0.0f && y != 1.0f)
      throw std::invalid_argument("f1_score: ground truth must be binary");
    bool p = static_cast<double>(prob_map[i]) > threshold;
    bool t = y == 1.0f;
    if (p && t)
      ++tp;
    else if (p)
      ++fp;
    else if (t)
      ++fn;
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // both empty
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

EvalReport evaluate_with_predictor(const PredictFn& predict, const Manifest& manifest,
                                   Split split, bool use_corrected_labels,
                                   double threshold, int mc_samples, uint64_t mc_seed) {
  EvalReport rep;
  rep.split = to_string(split);
  rep.corrected_labels = use_corrected_labels;
  rep.mc_samples = mc_samples;
  rep.mc_seed = mc_seed;
  rep.threshold = threshold;

  std::vector<const ManifestRow*> rows;
  for (const auto& r : manifest.rows)
    if (r.split == split) rows.push_back(&r);
  if (rows.empty())
    throw std::runtime_error(std::string("evaluate: split '") + to_string(split) +
                             "' is empty");
  if (use_corrected_labels) {
    std::string missing;
    for (const auto* r : rows)
      if (r->split == Split::test && std::fabs(r->off_nadir_deg) > 40.0 &&
          r->corrected_mask_path.empty())
        missing += (missing.empty() ? "" : ", ") + r->sample_id;
    if (!missing.empty())
      throw std::runtime_error("evaluate: corrected labels demanded but missing for: " +
                               missing);
  }

  std::map<double, std::pair<double, int>> angle_acc;
  std::array<double, 3> bin_acc{};
  double total = 0.0;
  for (const auto* r : rows) {
    Tensor prob = predict(*r);
    Tensor gt = load_gt(manifest, *r, use_corrected_labels);
    double f1 = f1_score(prob, gt, threshold);
    rep.rows.push_back({r->sample_id, r->off_nadir_deg, f1});
    auto& aa = angle_acc[r->off_nadir_deg];
    aa.first += f1;
    aa.second += 1;
    int b = static_cast<int>(bin_angle(r->off_nadir_deg));
    bin_acc[static_cast<size_t>(b)] += f1;
    rep.bin_counts[static_cast<size_t>(b)] += 1;
    total += f1;
  }
  for (const auto& [ang, acc] : angle_acc)
    rep.per_angle.emplace_back(ang, acc.first / acc.second);
  for (int b = 0; b < 3; ++b)
    rep.per_bin[static_cast<size_t>(b)] =
        rep.bin_counts[static_cast<size_t>(b)] > 0
            ? bin_acc[static_cast<size_t>(b)] / rep.bin_counts[static_cast<size_t>(b)]
            : std::numeric_limits<double>::quiet_NaN();
  rep.overall = total / static_cast<double>(rep.rows.size());
  return rep;
}

EvalReport evaluate(Checkpoint& ckpt, const Manifest& manifest, Split split,
                    const McConfig& mc, bool use_corrected_labels) {
  bool need_meta = ckpt.model.config.injection != InjectionMode::none;
  bool dropout_active = ckpt.model.config.has_dropout_layers();
  McConfig eff = mc;
  // Without live dropout every MC pass is identical, so one pass suffices and
  // yields the same mean (exactly: the rounded mean of T equal values is that
  // value) and zero variance.
  if (!dropout_active) eff.num_samples = 1;
  PredictFn fn = [&](const ManifestRow& row) {
    Tensor img = read_tensor_f32(manifest.root / row.image_path);
    Tensor meta;
    if (need_meta) {
      Tensor m = normalize_metadata(row.off_nadir_deg, row.gsd, ckpt.stats);
      meta = Tensor({1, 2});
      meta[0] = m[0];
      meta[1] = m[1];
    }
    PredictionResult pr =
        mc_predict(ckpt.model, img, need_meta ? &meta : nullptr, eff, dropout_active);
    return pr.mean_prob;
  };
  return evaluate_with_predictor(fn, manifest, split, use_corrected_labels, 0.5,
                                 mc.num_samples, mc.seed);
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write report: " + path.string());
  f << "# segmentation eval report v1\n";
  f << "# split=" << r.split << "\n";
  f << "# corrected_labels=" << (r.corrected_labels ? "on" : "off") << "\n";
  f << "# mc_samples=" << r.mc_samples << "\n";
  f << "# mc_seed=" << r.mc_seed << "\n";
  f << "# threshold=" << fmt(r.threshold) << "\n";
  f << "# columns: sample_id\tangle\tf1\n";
  for (const auto& row : r.rows)
    f << row.sample_id << '\t' << fmt(row.angle, "%.10g") << '\t' << fmt(row.f1) << '\n';
  for (const auto& [ang, f1] : r.per_angle)
    f << "# per_angle\t" << fmt(ang, "%.10g") << '\t' << fmt(f1) << '\n';
  for (int b = 0; b < 3; ++b) {
    f << "# per_bin\t" << to_string(static_cast<AngleBin>(b)) << '\t';
    if (r.bin_counts[static_cast<size_t>(b)] > 0)
      f << fmt(r.per_bin[static_cast<size_t>(b)]);
    else
      f << "-";
    f << '\t' << r.bin_counts[static_cast<size_t>(b)] << '\n';
  }
  f << "# overall\t" << fmt(r.overall) << '\n';
  if (!f) throw std::runtime_error("report write failed: " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open report: " + path.string());
  EvalReport r;
  std::string line;
  auto after_eq = [](const std::string& s) { return s.substr(s.find('=') + 1); };
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# split=", 0) == 0) r.split = after_eq(line);
      else if (line.rfind("# corrected_labels=", 0) == 0)
        r.corrected_labels = after_eq(line) == "on";
      else if (line.rfind("# mc_samples=", 0) == 0) r.mc_samples = std::stoi(after_eq(line));
      else if (line.rfind("# mc_seed=", 0) == 0) r.mc_seed = std::stoull(after_eq(line));
      else if (line.rfind("# threshold=", 0) == 0) r.threshold = std::stod(after_eq(line));
      else if (line.rfind("# per_angle\t", 0) == 0) {
        std::istringstream ss(line.substr(12));
        double a, v;
        ss >> a >> v;
        r.per_angle.emplace_back(a, v);
      } else if (line.rfind("# per_bin\t", 0) == 0) {
        std::istringstream ss(line.substr(10));
        std::string name, val;
        int cnt;
        ss >> name >> val >> cnt;
        for (int b = 0; b < 3; ++b)
          if (name == to_string(static_cast<AngleBin>(b))) {
            r.per_bin[static_cast<size_t>(b)] =
                val == "-" ? std::numeric_limits<double>::quiet_NaN() : std::stod(val);
            r.bin_counts[static_cast<size_t>(b)] = cnt;
          }
      } else if (line.rfind("# overall\t", 0) == 0) {
        r.overall = std::stod(line.substr(10));
      }
      continue;
    }
    std::istringstream ss(line);
    EvalRow row;
    ss >> row.sample_id >> row.angle >> row.f1;
    if (ss.fail()) throw std::runtime_error("report parse error: " + line);
    r.rows.push_back(std::move(row));
  }
  if (r.rows.empty()) throw std::runtime_error("report has no rows: " + path.string());
  return r;
}

std::vector<AblationRow> ablate_mc_samples(
    Checkpoint& ckpt, const Manifest& manifest, Split split, const std::vector<int>& t_list,
    const AblateBaselines& baselines, const McConfig& base_mc,
    std::vector<std::vector<EvalRow>>* per_image_rows) {
  if (t_list.empty()) throw std::invalid_argument("ablate: empty T list");
  for (int t : t_list)
    if (t < 1) throw std::invalid_argument("ablate: T values must be >= 1");
  if (!ckpt.model.config.has_dropout_layers())
    throw std::invalid_argument("ablate: checkpoint was not trained with dropout layers");
  if (baselines.no_dropout && !baselines.no_dropout_ckpt)
    throw std::invalid_argument("ablate: no-dropout baseline requested without a checkpoint");

  int t_max = *std::max_element(t_list.begin(), t_list.end());
  bool need_meta = ckpt.model.config.injection != InjectionMode::none;

  std::vector<const ManifestRow*> rows;
  for (const auto& r : manifest.rows)
    if (r.split == split) rows.push_back(&r);
  if (rows.empty()) throw std::runtime_error("ablate: empty split");

  struct Acc {
    double total = 0.0, very = 0.0;
    int n = 0, n_very = 0;
    std::vector<EvalRow> rows;
  };
  std::vector<Acc> acc(t_list.size());
  Acc acc_regular, acc_nodrop;

  auto meta_for = [&](const Checkpoint& c, const ManifestRow& row) {
    Tensor m = normalize_metadata(row.off_nadir_deg, row.gsd, c.stats);
    Tensor out({1, 2});
    out[0] = m[0];
    out[1] = m[1];
    return out;
  };

  for (const auto* r : rows) {
    Tensor img = read_tensor_f32(manifest.root / r->image_path);
    Tensor gt = load_gt(manifest, *r, false);
    bool very = bin_angle(r->off_nadir_deg) == AngleBin::VeryOffNadir;

    McConfig mc = base_mc;
    mc.num_samples = t_max;
    mc.retain_samples = true;
    Tensor meta;
    if (need_meta) meta = meta_for(ckpt, *r);
    PredictionResult full =
        mc_predict(ckpt.model, img, need_meta ? &meta : nullptr, mc, true);

    for (size_t ti = 0; ti < t_list.size(); ++ti) {
      std::vector<Tensor> prefix(full.logit_samples.begin(),
                                 full.logit_samples.begin() + t_list[ti]);
      PredictionResult agg = aggregate_mc_samples(prefix, nullptr);
      double f1 = f1_score(agg.mean_prob, gt, 0.5);
      acc[ti].total += f1;
      acc[ti].n += 1;
      if (very) {
        acc[ti].very += f1;
        acc[ti].n_very += 1;
      }
      acc[ti].rows.push_back({r->sample_id, r->off_nadir_deg, f1});
    }

    if (baselines.regular_dropout) {
      McConfig one = base_mc;
      one.num_samples = 1;
      one.retain_samples = false;
      PredictionResult det =
          mc_predict(ckpt.model, img, need_meta ? &meta : nullptr, one, false);
      double f1 = f1_score(det.mean_prob, gt, 0.5);
      acc_regular.total += f1;
      acc_regular.n += 1;
      if (very) {
        acc_regular.very += f1;
        acc_regular.n_very += 1;
      }
      acc_regular.rows.push_back({r->sample_id, r->off_nadir_deg, f1});
    }
    if (baselines.no_dropout) {
      Checkpoint& nd = *const_cast<Checkpoint*>(baselines.no_dropout_ckpt);
      bool nd_meta = nd.model.config.injection != InjectionMode::none;
      Tensor nm;
      if (nd_meta) nm = meta_for(nd, *r);
      McConfig one = base_mc;
      one.num_samples = 1;
      one.retain_samples = false;
      PredictionResult det = mc_predict(nd.model, img, nd_meta ? &nm : nullptr, one, false);
      double f1 = f1_score(det.mean_prob, gt, 0.5);
      acc_nodrop.total += f1;
      acc_nodrop.n += 1;
      if (very) {
        acc_nodrop.very += f1;
        acc_nodrop.n_very += 1;
      }
      acc_nodrop.rows.push_back({r->sample_id, r->off_nadir_deg, f1});
    }
  }

  auto finish = [](const Acc& a, std::string label) {
    AblationRow row;
    row.label = std::move(label);
    row.overall_f1 = a.n > 0 ? a.total / a.n : std::numeric_limits<double>::quiet_NaN();
    row.very_offnadir_f1 =
        a.n_very > 0 ? a.very / a.n_very : std::numeric_limits<double>::quiet_NaN();
    return row;
  };

  std::vector<AblationRow> out;
  for (size_t ti = 0; ti < t_list.size(); ++ti) {
    out.push_back(finish(acc[ti], std::to_string(t_list[ti])));
    if (per_image_rows) per_image_rows->push_back(acc[ti].rows);
  }
  if (baselines.regular_dropout) {
    out.push_back(finish(acc_regular, "regular_dropout"));
    if (per_image_rows) per_image_rows->push_back(acc_regular.rows);
  }
  if (baselines.no_dropout) {
    out.push_back(finish(acc_nodrop, "no_dropout"));
    if (per_image_rows) per_image_rows->push_back(acc_nodrop.rows);
  }
  return out;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write csv: " + path.string());
  f << "T,overall_f1,very_offnadir_f1\n";
  for (const auto& r : rows)
    f << r.label << ',' << fmt(r.overall_f1) << ',' << fmt(r.very_offnadir_f1) << '\n';
  if (!f) throw std::runtime_error("csv write failed: " + path.string());
}

std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open csv: " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "T,overall_f1,very_offnadir_f1")
    throw std::runtime_error("csv: unexpected header in " + path.string());
  std::vector<AblationRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    AblationRow r;
    std::string a, b;
    if (!std::getline(ss, r.label, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b))
      throw std::runtime_error("csv parse error: " + line);
    r.overall_f1 = std::stod(a);
    r.very_offnadir_f1 = std::stod(b);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw std::runtime_error("csv has no rows: " + path.string());
  return rows;
}

void export_uncertainty_maps(const PredictionResult& result,
                             const std::filesystem::path& out_prefix) {
  if (result.mean_prob.empty()) throw std::invalid_argument("export maps: empty result");
  int h = result.mean_prob.dim(0), w = result.mean_prob.dim(1);
  std::string prefix = out_prefix.string();
  std::ofstream range(prefix + "_range.txt");
  if (!range) throw std::runtime_error("cannot write sidecar: " + prefix + "_range.txt");
  auto emit = [&](const Tensor& t, const char* name) {
    double mn, mx;
    std::vector<uint8_t> pix = quantize_map(t, &mn, &mx);
    write_pgm(prefix + "_" + name + ".pgm", pix, w, h);
    range << name << '\t' << fmt(mn) << '\t' << fmt(mx) << '\n';
  };
  emit(result.mean_prob, "prob");
  emit(result.epistemic_var, "epistemic");
  if (!result.mean_sigma.empty()) emit(result.mean_sigma, "aleatoric");
  if (!range) throw std::runtime_error("sidecar write failed");
}

void export_acm_maps(const std::vector<Tensor>& acm_products, const Tensor& input_image,
                     const std::filesystem::path& out_prefix, double threshold) {
  if (acm_products.empty()) throw std::invalid_argument("export_acm_maps: no products");
  if (input_image.rank() != 3 || input_image.dim(0) < 3)
    throw std::invalid_argument("export_acm_maps: input must be [C>=3,S,S]");
  int S = input_image.dim(1);
  if (input_image.dim(2) != S) throw std::invalid_argument("export_acm_maps: square input");
  std::string prefix = out_prefix.string();

  for (size_t k = 0; k < acm_products.size(); ++k) {
    Tensor mean = channel_mean(acm_products[k]);
    int h = mean.dim(0), w = mean.dim(1);
    double mn, mx;
    std::vector<uint8_t> pix = quantize_map(mean, &mn, &mx);
    std::string level = std::to_string(k + 1);
    write_pgm(prefix + "_acm" + level + ".pgm", pix, w, h);

    Tensor norm({h, w});
    if (mx > mn)
      for (size_t i = 0; i < norm.size(); ++i)
        norm[i] = static_cast<float>((mean[i] - mn) / (mx - mn));
    Tensor up = resize_bilinear(norm, S, S);
    std::vector<uint8_t> rgb(static_cast<size_t>(S) * S * 3);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        size_t o = (static_cast<size_t>(y) * S + x) * 3;
        for (int c = 0; c < 3; ++c) {
          float v = input_image.data()[(static_cast<size_t>(c) * S + y) * S + x];
          rgb[o + static_cast<size_t>(c)] =
              static_cast<uint8_t>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0));
        }
        if (static_cast<double>(up[static_cast<size_t>(y) * S + x]) > threshold) {
          rgb[o] = static_cast<uint8_t>(rgb[o] / 2);
          rgb[o + 1] = static_cast<uint8_t>(rgb[o + 1] / 2 + 128);
          rgb[o + 2] = static_cast<uint8_t>(rgb[o + 2] / 2);
        }
      }
    write_ppm(prefix + "_acm" + level + "_overlay.ppm", rgb, S, S);
  }
}

}  // namespace offnadir
