#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "offnadir/data.hpp"
#include "offnadir/evaluation.hpp"
#include "offnadir/interp.hpp"
#include "offnadir/tensor_io.hpp"
#include "test_helpers.hpp"

using namespace offnadir;
using namespace testutil;

TEST_CASE("view gsd follows the squared-cosine law") {
  CHECK(view_gsd(0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(view_gsd(60.0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(view_gsd(-30.0) == doctest::Approx(0.5 / 0.75).epsilon(1e-9));
  CHECK(view_gsd(44.0) == view_gsd(-44.0));
  CHECK(view_gsd(54.0) > view_gsd(44.0));
}

TEST_CASE("roof displacement rounds half a tangent-scaled height") {
  CHECK(roof_displacement_px(20.0, 54.0) == 14);  // 10 * tan 54 = 13.76
  CHECK(roof_displacement_px(20.0, -7.8) == -1);
  CHECK(roof_displacement_px(20.0, 0.0) == 0);
  CHECK(roof_displacement_px(0.0, 54.0) == 0);
  CHECK(roof_displacement_px(20.0, -54.0) == -14);
  CHECK(roof_displacement_px(10.0, 44.0) == 5);  // 5 * 0.9657 = 4.83
}

TEST_CASE("angle bins split at 25 and 40 degrees of magnitude") {
  CHECK(bin_angle(25.0) == AngleBin::Nadir);
  CHECK(bin_angle(-25.0) == AngleBin::Nadir);
  CHECK(bin_angle(25.1) == AngleBin::OffNadir);
  CHECK(bin_angle(39.9) == AngleBin::OffNadir);
  CHECK(bin_angle(40.0) == AngleBin::VeryOffNadir);
  CHECK(bin_angle(0.0) == AngleBin::Nadir);
  CHECK(bin_angle(-54.0) == AngleBin::VeryOffNadir);
  CHECK(bin_angle(89.9) == AngleBin::VeryOffNadir);
  CHECK_THROWS_AS(bin_angle(90.0), std::invalid_argument);
  CHECK_THROWS_AS(bin_angle(-90.0), std::invalid_argument);
}

TEST_CASE("the benchmark angles partition as expected") {
  const auto& a = default_angles();
  REQUIRE(a == std::vector<double>{-32.5, -25.0, -7.8, 0.0, 10.0, 25.0, 32.0, 44.0, 54.0});
  std::vector<double> nadir, off, very;
  for (double ang : a) {
    switch (bin_angle(ang)) {
      case AngleBin::Nadir: nadir.push_back(ang); break;
      case AngleBin::OffNadir: off.push_back(ang); break;
      case AngleBin::VeryOffNadir: very.push_back(ang); break;
    }
  }
  CHECK(nadir == std::vector<double>{-25.0, -7.8, 0.0, 10.0, 25.0});
  CHECK(off == std::vector<double>{-32.5, 32.0});
  CHECK(very == std::vector<double>{44.0, 54.0});
}

TEST_CASE("scene synthesis is deterministic and in bounds") {
  SceneSpec a = make_scene(7, 64, Rng(123));
  SceneSpec b = make_scene(7, 64, Rng(123));
  REQUIRE(a.buildings.size() == b.buildings.size());
  CHECK(a.world_seed == b.world_seed);
  for (size_t i = 0; i < a.buildings.size(); ++i) {
    CHECK(a.buildings[i].x0 == b.buildings[i].x0);
    CHECK(a.buildings[i].height_m == b.buildings[i].height_m);
  }
  for (int sid = 0; sid < 20; ++sid) {
    SceneSpec sc = make_scene(sid, 64, Rng(55).fork(static_cast<uint64_t>(sid)));
    REQUIRE(!sc.buildings.empty());
    CHECK(sc.buildings.size() <= 5);
    CHECK(sc.buildings[0].height_m >= 10.0);  // anchor building is always tall
    for (const auto& bl : sc.buildings) {
      CHECK(bl.x0 >= 3);
      CHECK(bl.x0 + bl.w < 64);
      CHECK(bl.y0 >= 2);
      CHECK(bl.y0 + bl.h < 64);
      CHECK(bl.height_m >= 0.0);
      CHECK(bl.height_m <= 28.0);
      for (float al : bl.albedo) {
        CHECK(al > 0.5f);
        CHECK(al < 0.9f);
      }
    }
  }
  CHECK_THROWS_AS(make_scene(0, 16, Rng(1)), std::invalid_argument);
}

TEST_CASE("static scene texture does not depend on the viewing angle") {
  SceneSpec sc;
  sc.scene_id = 0;
  sc.size = 48;
  sc.world_seed = 999;  // no buildings: pure background
  Tensor clean_a, clean_b;
  render_view(sc, 0.0, view_gsd(0.0), Rng(1), &clean_a);
  render_view(sc, 54.0, view_gsd(54.0), Rng(2), &clean_b);
  CHECK(bitwise_equal(clean_a, clean_b));
}

TEST_CASE("labels sit at the reference angle while pixels move") {
  SceneSpec sc;
  sc.size = 64;
  sc.world_seed = 4242;
  Building b;
  b.x0 = 20;
  b.y0 = 24;
  b.w = 8;
  b.h = 8;
  b.height_m = 20.0;
  b.albedo = {0.7f, 0.7f, 0.7f, 0.7f};
  sc.buildings.push_back(b);

  RenderResult ref = render_view(sc, kReferenceAngleDeg, view_gsd(kReferenceAngleDeg), Rng(3));
  CHECK(bitwise_equal(ref.mask, ref.corrected_mask));

  RenderResult steep = render_view(sc, 54.0, view_gsd(54.0), Rng(4));
  CHECK(bitwise_equal(steep.mask, ref.mask));  // annotation never moves
  CHECK_FALSE(bitwise_equal(steep.corrected_mask, steep.mask));

  auto mismatch = [](const RenderResult& r) {
    int n = 0;
    for (size_t i = 0; i < r.mask.size(); ++i)
      if (r.mask[i] != r.corrected_mask[i]) ++n;
    return n;
  };
  int prev = mismatch(render_view(sc, 0.0, view_gsd(0.0), Rng(5)));
  for (double ang : {10.0, 25.0, 32.0, 44.0, 54.0}) {
    int cur = mismatch(render_view(sc, ang, view_gsd(ang), Rng(5)));
    CHECK(cur > prev);
    prev = cur;
  }
  prev = mismatch(render_view(sc, kReferenceAngleDeg, view_gsd(kReferenceAngleDeg), Rng(6)));
  for (double ang : {-25.0, -32.5}) {
    int cur = mismatch(render_view(sc, ang, view_gsd(ang), Rng(6)));
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("render rejects impossible viewing conditions") {
  SceneSpec sc;
  sc.size = 32;
  sc.world_seed = 1;
  CHECK_THROWS_AS(render_view(sc, 90.0, 0.5, Rng(1)), std::invalid_argument);
  CHECK_THROWS_AS(render_view(sc, 0.0, 0.0, Rng(1)), std::invalid_argument);
  CHECK_THROWS_AS(render_view(sc, 0.0, -1.0, Rng(1)), std::invalid_argument);
}

TEST_CASE("coarser gsd blurs detail away") {
  SceneSpec sc = make_scene(1, 64, Rng(77));
  RenderResult fine = render_view(sc, 10.0, view_gsd(kReferenceAngleDeg), Rng(8));
  RenderResult coarse = render_view(sc, 10.0, 4.0 * view_gsd(kReferenceAngleDeg), Rng(8));
  CHECK_FALSE(bitwise_equal(fine.image, coarse.image));
  // coarse rendering has strictly less spatial variation
  auto tv = [](const Tensor& img) {
    double acc = 0.0;
    int S = img.dim(1);
    const float* p = img.data();  // first band
    for (int y = 0; y < S; ++y)
      for (int x = 0; x + 1 < S; ++x) acc += std::fabs(p[y * S + x + 1] - p[y * S + x]);
    return acc;
  };
  CHECK(tv(coarse.image) < tv(fine.image));
}

TEST_CASE("scene splits are disjoint by scene and sized 6:2:2") {
  std::vector<Split> s = split_scenes(200, 0.6, 0.2, Rng(9));
  int n[3] = {0, 0, 0};
  for (Split v : s) n[static_cast<int>(v)]++;
  CHECK(n[0] == 120);
  CHECK(n[1] == 40);
  CHECK(n[2] == 40);
  std::vector<Split> again = split_scenes(200, 0.6, 0.2, Rng(9));
  CHECK(s == again);
  std::vector<Split> other = split_scenes(200, 0.6, 0.2, Rng(10));
  CHECK(s != other);

  CHECK_THROWS_AS(split_scenes(2, 0.6, 0.2, Rng(1)), std::invalid_argument);
  CHECK_THROWS_AS(split_scenes(3, 0.1, 0.8, Rng(1)), std::invalid_argument);
}

TEST_CASE("dataset generation writes a parseable, policy-conforming manifest") {
  auto dir = temp_dir("gen");
  GenConfig cfg;
  cfg.num_scenes = 6;
  cfg.image_size = 32;
  cfg.seed = 5;
  cfg.angles = {-7.8, 10.0, 44.0};
  Manifest m = generate_dataset(cfg, dir);
  REQUIRE(m.rows.size() == 18);

  Manifest r1 = read_manifest(dir);
  Manifest r2 = read_manifest(dir / "manifest.tsv");
  REQUIRE(r1.rows.size() == m.rows.size());
  REQUIRE(r2.rows.size() == m.rows.size());
  std::map<int, Split> scene_split;
  for (size_t i = 0; i < m.rows.size(); ++i) {
    const auto& a = m.rows[i];
    const auto& b = r1.rows[i];
    CHECK(a.sample_id == b.sample_id);
    CHECK(a.scene_id == b.scene_id);
    CHECK(a.split == b.split);
    CHECK(a.off_nadir_deg == b.off_nadir_deg);  // benchmark angles print exactly
    CHECK(a.gsd == doctest::Approx(b.gsd).epsilon(1e-9));  // 10 significant digits on disk
    CHECK(a.image_path == b.image_path);
    CHECK(a.corrected_mask_path == b.corrected_mask_path);
    CHECK(a.gsd == doctest::Approx(view_gsd(a.off_nadir_deg)).epsilon(1e-12));
    CHECK(std::filesystem::exists(dir / a.image_path));
    CHECK(std::filesystem::exists(dir / a.mask_path));
    // corrected labels exist exactly for steep test views
    bool want_corr = a.split == Split::test && std::fabs(a.off_nadir_deg) > 40.0;
    CHECK(a.corrected_mask_path.empty() == !want_corr);
    if (want_corr) CHECK(std::filesystem::exists(dir / a.corrected_mask_path));
    auto it = scene_split.find(a.scene_id);
    if (it == scene_split.end())
      scene_split[a.scene_id] = a.split;
    else
      CHECK(it->second == a.split);
  }
  // image and mask payloads have the advertised shapes and ranges
  Tensor img = read_tensor_f32(dir / m.rows[0].image_path);
  Tensor mask = read_tensor_f32(dir / m.rows[0].mask_path);
  CHECK(img.shape() == std::vector<int>{4, 32, 32});
  CHECK(mask.shape() == std::vector<int>{32, 32});
  for (size_t i = 0; i < img.size(); ++i) {
    CHECK(img[i] >= 0.0f);
    CHECK(img[i] <= 1.0f);
  }
  for (size_t i = 0; i < mask.size(); ++i) CHECK((mask[i] == 0.0f || mask[i] == 1.0f));
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset generation is reproducible end to end") {
  auto d1 = temp_dir("gen_a");
  auto d2 = temp_dir("gen_b");
  GenConfig cfg;
  cfg.num_scenes = 4;
  cfg.image_size = 32;
  cfg.seed = 21;
  cfg.angles = {-7.8, 54.0};
  Manifest a = generate_dataset(cfg, d1);
  Manifest b = generate_dataset(cfg, d2);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].sample_id == b.rows[i].sample_id);
    CHECK(a.rows[i].split == b.rows[i].split);
    CHECK(bitwise_equal(read_tensor_f32(d1 / a.rows[i].image_path),
                        read_tensor_f32(d2 / b.rows[i].image_path)));
    CHECK(bitwise_equal(read_tensor_f32(d1 / a.rows[i].mask_path),
                        read_tensor_f32(d2 / b.rows[i].mask_path)));
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("dataset generation validates its configuration") {
  auto dir = temp_dir("gen_bad");
  GenConfig cfg;
  cfg.num_scenes = 4;
  cfg.image_size = 32;
  cfg.angles = {0.0, 44.0};  // reference view missing
  CHECK_THROWS_AS(generate_dataset(cfg, dir), std::invalid_argument);
  cfg.angles = {-7.8, 95.0};
  CHECK_THROWS_AS(generate_dataset(cfg, dir), std::invalid_argument);
  cfg.angles = {-7.8};
  cfg.num_scenes = 2;
  CHECK_THROWS_AS(generate_dataset(cfg, dir), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest reader flags malformed input") {
  auto dir = temp_dir("manifest_bad");
  std::filesystem::create_directories(dir);
  CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), std::runtime_error);
  {
    std::ofstream f(dir / "manifest.tsv");
    f << "# header only\n";
  }
  CHECK_THROWS_AS(read_manifest(dir), std::runtime_error);
  {
    std::ofstream f(dir / "manifest.tsv");
    f << "s0_a0\t0\ttrain\t0\n";  // too few columns
  }
  CHECK_THROWS_AS(read_manifest(dir), std::runtime_error);
  {
    std::ofstream f(dir / "manifest.tsv");
    f << "s0_a0\t0\tholdout\t0\t0.5\ti.ten\tm.ten\t-\n";
  }
  CHECK_THROWS_AS(read_manifest(dir), std::invalid_argument);  // unknown split
  std::filesystem::remove_all(dir);
}

TEST_CASE("metadata statistics come from the training split alone") {
  Manifest m;
  auto add = [&](Split s, double ang) {
    ManifestRow r;
    r.split = s;
    r.off_nadir_deg = ang;
    r.gsd = view_gsd(ang);
    m.rows.push_back(r);
  };
  add(Split::train, 0.0);
  add(Split::train, 10.0);
  add(Split::test, 50.0);  // must not contribute
  MetaStats st = compute_meta_stats(m);
  CHECK(st.angle_mean == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(st.angle_std == doctest::Approx(5.0).epsilon(1e-12));  // population spread
  double g0 = view_gsd(0.0), g1 = view_gsd(10.0);
  CHECK(st.gsd_mean == doctest::Approx((g0 + g1) / 2).epsilon(1e-12));
  CHECK(st.gsd_std == doctest::Approx(std::fabs(g1 - g0) / 2).epsilon(1e-9));

  Tensor z = normalize_metadata(10.0, g1, st);
  REQUIRE(z.shape() == std::vector<int>{2});
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(z[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(normalize_metadata(0.0, g0, st)[0] == doctest::Approx(-1.0).epsilon(1e-6));

  Manifest no_train;
  ManifestRow vr;
  vr.split = Split::val;
  no_train.rows.push_back(vr);
  CHECK_THROWS_AS(compute_meta_stats(no_train), std::runtime_error);
  Manifest flat;
  flat.rows = {m.rows[0], m.rows[0]};
  MetaStats degenerate = compute_meta_stats(flat);
  CHECK_THROWS_AS(normalize_metadata(0.0, 0.5, degenerate), std::runtime_error);
}

TEST_CASE("bilinear resize hits hand-checked values") {
  Tensor row({1, 2});
  row[0] = 0.0f;
  row[1] = 1.0f;
  Tensor up = resize_bilinear(row, 1, 4);
  REQUIRE(up.shape() == std::vector<int>{1, 4});
  CHECK(up[0] == doctest::Approx(0.0));
  CHECK(up[1] == doctest::Approx(0.25));
  CHECK(up[2] == doctest::Approx(0.75));
  CHECK(up[3] == doctest::Approx(1.0));

  Tensor same = resize_bilinear(row, 1, 2);
  CHECK(bitwise_equal(same, row));

  Tensor c({3, 2, 2});
  c.fill(0.625f);
  Tensor cr = resize_bilinear(c, 5, 7);
  REQUIRE(cr.shape() == std::vector<int>{3, 5, 7});
  for (size_t i = 0; i < cr.size(); ++i) CHECK(cr[i] == 0.625f);

  Tensor bad({4});
  CHECK_THROWS_AS(resize_bilinear(bad, 2, 2), std::invalid_argument);
}

TEST_CASE("box downsample averages fractional source cells") {
  Tensor row({1, 4});
  for (int i = 0; i < 4; ++i) row[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  Tensor half = box_downsample(row, 1, 2);
  CHECK(half[0] == doctest::Approx(1.5));
  CHECK(half[1] == doctest::Approx(3.5));

  Tensor three({1, 3});
  three[0] = 3.0f;
  three[1] = 6.0f;
  three[2] = 12.0f;
  Tensor two = box_downsample(three, 1, 2);
  CHECK(two[0] == doctest::Approx((3.0 + 0.5 * 6.0) / 1.5));
  CHECK(two[1] == doctest::Approx((0.5 * 6.0 + 12.0) / 1.5));

  Tensor c({2, 6, 6});
  c.fill(0.3125f);
  Tensor cd = box_downsample(c, 2, 3);
  for (size_t i = 0; i < cd.size(); ++i) CHECK(cd[i] == doctest::Approx(0.3125));
}
