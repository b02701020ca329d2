#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "offnadir/rng.hpp"
#include "offnadir/tensor.hpp"

namespace offnadir {

// Annotation reference angle and nadir ground sample distance of the benchmark.
constexpr double kReferenceAngleDeg = -7.8;
constexpr double kNadirGsd = 0.5;  // m/px at 0 deg
// Horizontal roof displacement in px: round(k * height_m * tan(angle)).
constexpr double kDisplacementPxPerM = 0.5;

const std::vector<double>& default_angles();  // the 9 benchmark viewing angles

double view_gsd(double angle_deg);  // kNadirGsd / cos^2(angle)
int roof_displacement_px(double height_m, double angle_deg);

enum class Split { train = 0, val = 1, test = 2 };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct Building {
  int x0 = 0, y0 = 0, w = 0, h = 0;  // footprint rect in px
  double height_m = 0.0;
  std::array<float, 4> albedo{};  // per-channel roof reflectance
};

struct SceneSpec {
  int scene_id = 0;
  uint64_t world_seed = 0;  // drives static scene texture
  int size = 64;
  std::vector<Building> buildings;
};

struct RenderResult {
  Tensor image;           // [4,S,S] in [0,1]
  Tensor mask;            // [S,S] building footprint seen at the reference angle
  Tensor corrected_mask;  // [S,S] building extent at the actual angle
};

SceneSpec make_scene(int scene_id, int size, Rng rng);
// gsd controls the resolution degradation relative to the reference view.
// clean_out, when given, receives the undegraded composite.
RenderResult render_view(const SceneSpec& scene, double angle_deg, double gsd, Rng rng,
                         Tensor* clean_out = nullptr);

struct ManifestRow {
  std::string sample_id;
  int scene_id = 0;
  Split split = Split::train;
  double off_nadir_deg = 0.0;
  double gsd = 0.0;
  std::string image_path;           // relative to manifest root
  std::string mask_path;
  std::string corrected_mask_path;  // empty when absent
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRow> rows;
};

struct GenConfig {
  int num_scenes = 200;
  std::vector<double> angles;  // defaults to default_angles() when empty
  int image_size = 64;
  uint64_t seed = 1;
};

// Renders every scene at every angle, assigns location-disjoint splits and
// writes images, masks and manifest.tsv under out_dir.
Manifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

// Scene-level 6:2:2-style split; same scene never crosses splits.
std::vector<Split> split_scenes(int num_scenes, double train_frac, double val_frac, Rng rng);

void write_manifest(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir_or_file);

struct MetaStats {
  double angle_mean = 0.0, angle_std = 1.0;
  double gsd_mean = 0.0, gsd_std = 1.0;
};

MetaStats compute_meta_stats(const Manifest& m);  // over the train split
// Returns [2]: normalized (angle, gsd). Degenerate stats are an error.
Tensor normalize_metadata(double angle_deg, double gsd, const MetaStats& stats);

}  // namespace offnadir
