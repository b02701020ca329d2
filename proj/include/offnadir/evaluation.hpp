#pragma once

#include <array>
#include <functional>

#include "offnadir/checkpoint.hpp"
#include "offnadir/uncertainty.hpp"

namespace offnadir {

enum class AngleBin { Nadir = 0, OffNadir = 1, VeryOffNadir = 2 };
const char* to_string(AngleBin b);

// |theta| <= 25 -> Nadir; 25 < |theta| < 40 -> OffNadir; 40 <= |theta| < 90 ->
// VeryOffNadir. |theta| >= 90 is an error.
AngleBin bin_angle(double theta_deg);

// Pixel F1 of the thresholded probability map. Both masks empty counts as a
// perfect prediction (F1 = 1).
double f1_score(const Tensor& prob_map, const Tensor& gt, double threshold = 0.5);

struct EvalRow {
  std::string sample_id;
  double angle = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string split;
  bool corrected_labels = false;
  int mc_samples = 0;
  uint64_t mc_seed = 0;
  double threshold = 0.5;
  std::vector<EvalRow> rows;
  std::vector<std::pair<double, double>> per_angle;  // (angle, mean f1), ascending
  std::array<double, 3> per_bin{};                   // indexed by AngleBin
  std::array<int, 3> bin_counts{};
  double overall = 0.0;
};

// Predictor abstraction so the report machinery can be exercised with
// synthetic predictors in tests.
using PredictFn = std::function<Tensor(const ManifestRow&)>;  // returns prob map [S,S]

EvalReport evaluate_with_predictor(const PredictFn& predict, const Manifest& manifest,
                                   Split split, bool use_corrected_labels,
                                   double threshold, int mc_samples, uint64_t mc_seed);

// Full protocol: MC prediction per image (dropout active iff the checkpoint's
// uncertainty mode has dropout layers), F1 vs corrected labels where demanded.
EvalReport evaluate(Checkpoint& ckpt, const Manifest& manifest, Split split,
                    const McConfig& mc, bool use_corrected_labels);

void write_report(const std::filesystem::path& path, const EvalReport& r);
EvalReport read_report(const std::filesystem::path& path);

struct AblationRow {
  std::string label;  // T value, "regular_dropout" or "no_dropout"
  double overall_f1 = 0.0;
  double very_offnadir_f1 = 0.0;
};

struct AblateBaselines {
  bool regular_dropout = true;
  bool no_dropout = false;
  const Checkpoint* no_dropout_ckpt = nullptr;
};

// F1-vs-T curve on one checkpoint. Sample prefixes are shared across the T
// values, so T2 > T1 reuses T1's samples. per_image_rows, when given, receives
// the per-image rows backing each returned curve row.
std::vector<AblationRow> ablate_mc_samples(
    Checkpoint& ckpt, const Manifest& manifest, Split split, const std::vector<int>& t_list,
    const AblateBaselines& baselines, const McConfig& base_mc,
    std::vector<std::vector<EvalRow>>* per_image_rows = nullptr);

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path);

// Writes <prefix>_prob.pgm / _epistemic.pgm / _aleatoric.pgm (when present),
// each min-max normalized to 8 bits, plus <prefix>_range.txt with the raw
// min/max of every exported map.
void export_uncertainty_maps(const PredictionResult& result,
                             const std::filesystem::path& out_prefix);

// Per level: channel-mean product map as <prefix>_acm<k>.pgm plus
// <prefix>_acm<k>_overlay.ppm where normalized values above threshold tint the
// resized input green. Levels are numbered coarse to fine from 1.
void export_acm_maps(const std::vector<Tensor>& acm_products, const Tensor& input_image,
                     const std::filesystem::path& out_prefix, double threshold = 0.5);

}  // namespace offnadir
