#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"
#include "defocus/optics.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/thread_pool.hpp"
#include "test_support.hpp"

using namespace defocus;

namespace {

CameraConfig test_camera() {
  CameraConfig cfg;  // defaults: f = 20 mm, F2 = 6, foci {0.5, 0.8, 1.3}
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("circle of confusion matches the thin lens hand value") {
  CameraConfig cfg = test_camera();
  cfg.focus_distances_m = {0.3};
  cfg.breathing_mags = {1.0};
  // f = 0.020, F = 6, focused at 0.3 m, point at 0.4 m, 10 um pitch.
  const double px = coc_diameter_px(cfg, 0.4, 0.3);
  const double want_m = 0.020 * 0.020 * 0.1 / (6.0 * 0.4 * (0.3 - 0.020));
  CHECK(px == doctest::Approx(want_m / 1e-5).epsilon(1e-12));
  CHECK(px == doctest::Approx(5.952380952).epsilon(1e-9));
  // In focus: zero diameter.
  CHECK(coc_diameter_px(cfg, 0.3, 0.3) == 0.0);
}

TEST_CASE("oracle kernel is a unit mass disk that grows with defocus") {
  const CameraConfig cfg = test_camera();
  AberrationModel ideal;
  ideal.coma_strength = 0.0;
  ideal.field_curvature_m = 0.0;
  ideal.astig_ratio = 1.0;
  const PsfKernel near_focus = oracle_psf(cfg, ideal, 0.0, 0.0, 0.52, 0, 12);
  const PsfKernel far = oracle_psf(cfg, ideal, 0.0, 0.0, 0.9, 0, 12);
  CHECK(near_focus.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(far.sum() == doctest::Approx(1.0).epsilon(1e-9));
  auto spread = [](const PsfKernel& k) {
    double acc = 0;
    const int side = k.side();
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const double dx = c - k.radius();
        const double dy = r - k.radius();
        acc += k.at(r, c) * (dx * dx + dy * dy);
      }
    }
    return acc;
  };
  CHECK(spread(far) > spread(near_focus) + 1.0);
}

TEST_CASE("ideal on axis kernel is rotationally symmetric") {
  const CameraConfig cfg = test_camera();
  AberrationModel ideal;
  ideal.coma_strength = 0.0;
  ideal.field_curvature_m = 0.0;
  ideal.astig_ratio = 1.0;
  const PsfKernel k = oracle_psf(cfg, ideal, 0.0, 0.0, 1.1, 0, 12);
  const int side = k.side();
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      CHECK(k.at(r, c) == doctest::Approx(k.at(side - 1 - r, side - 1 - c)).epsilon(1e-9));
      CHECK(k.at(r, c) == doctest::Approx(k.at(c, r)).epsilon(1e-9));
    }
  }
}

TEST_CASE("astigmatism elongates the radial axis at theta zero") {
  const CameraConfig cfg = test_camera();
  AberrationModel ab;
  ab.coma_strength = 0.0;
  ab.field_curvature_m = 0.0;
  ab.astig_ratio = 0.5;
  const PsfKernel k = oracle_psf(cfg, ab, 0.9, 0.0, 1.1, 0, 12);
  double sx = 0, sy = 0;
  for (int r = 0; r < k.side(); ++r) {
    for (int c = 0; c < k.side(); ++c) {
      const double dx = c - k.radius();
      const double dy = r - k.radius();
      sx += k.at(r, c) * dx * dx;
      sy += k.at(r, c) * dy * dy;
    }
  }
  CHECK(sx > 1.5 * sy);  // radial (+x at theta 0) wider than tangential
}

TEST_CASE("support overflow raises instead of truncating mass") {
  const CameraConfig cfg = test_camera();
  AberrationModel ideal;
  ideal.coma_strength = 0.0;
  ideal.field_curvature_m = 0.0;
  ideal.astig_ratio = 1.0;
  CHECK_THROWS_AS(oracle_psf(cfg, ideal, 0.0, 0.0, 2.5, 0, 4), SupportOverflowError);
}

TEST_CASE("breathing magnification shifts the kernel centroid radially") {
  CameraConfig cfg = test_camera();
  cfg.breathing_mags = {1.002, 1.0, 1.0};
  AberrationModel ideal;
  ideal.coma_strength = 0.0;
  ideal.field_curvature_m = 0.0;
  ideal.astig_ratio = 1.0;
  const double ih = 0.9;
  const PsfKernel k = oracle_psf(cfg, ideal, ih, 0.0, 0.5, 0, 12);
  const double want = (1.002 - 1.0) * ih * corner_radius(501, 501);
  CHECK(want == doctest::Approx(0.6364).epsilon(1e-3));
  const auto c = k.centroid();
  CHECK(c[0] == doctest::Approx(want).epsilon(0.02));
  CHECK(std::abs(c[1]) < 1e-6);
}

TEST_CASE("textures are deterministic per seed and inside the unit range") {
  const ImageF a = make_texture("noise", 64, 48, Rng(5));
  const ImageF b = make_texture("noise", 64, 48, Rng(5));
  const ImageF c = make_texture("noise", 64, 48, Rng(6));
  CHECK(a.data() == b.data());
  CHECK(a.data() != c.data());
  double lo = 1.0, hi = 0.0;
  for (const double v : a.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi - lo > 0.3);  // actual contrast, not a flat field
  CHECK_THROWS_AS(make_texture("marble", 8, 8, Rng(1)), ConfigError);
  const ImageF checker = make_texture("checker", 32, 32, Rng(1));
  CHECK(checker.width() == 32);
}

TEST_CASE("render_blur with a constant provider equals plain convolution") {
  Rng rng(31);
  const ImageF sharp = testsup::random_image(40, 30, rng);
  const PsfKernel k = PsfKernel::uniform(3);
  ThreadPool pool(3);
  const ImageF a = render_blur(sharp, [&](double, double) { return k; }, 3, &pool);
  const ImageF b = convolve_valid(sharp, k);
  REQUIRE(a.width() == b.width());
  REQUIRE(a.height() == b.height());
  CHECK(a.data() == b.data());  // shared inner sample makes this bit exact
}

TEST_CASE("manifest round trips through save and load") {
  testsup::TempDir tmp("manifest");
  Manifest m;
  m.kind = "pair_dataset";
  m.seed = 99;
  m.camera = test_camera();
  m.aberration.coma_strength = 0.25;
  ManifestRecord rec;
  rec.path = "img/s_000.pfm";
  rec.role = "sharp";
  rec.focus_index = 0;
  rec.focus_distance_m = 0.5;
  rec.f_number = 22.0;
  rec.depth_m = 0.77;
  rec.texture_id = 2;
  m.records.push_back(rec);
  save_manifest(m, tmp / "m.json");
  const Manifest back = load_manifest(tmp / "m.json");
  CHECK(back.kind == m.kind);
  CHECK(back.seed == m.seed);
  CHECK(back.camera.focus_distances_m == m.camera.focus_distances_m);
  CHECK(back.aberration.coma_strength == 0.25);
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0].path == rec.path);
  CHECK(back.records[0].depth_m == rec.depth_m);
  save_manifest(back, tmp / "m2.json");
  CHECK(testsup::same_bytes(tmp / "m.json", tmp / "m2.json"));
}

TEST_CASE("pair dataset generation writes one sharp and n_focus blurred per scene") {
  testsup::TempDir tmp("gen");
  CameraConfig cfg = test_camera();
  cfg.image_width = 160;
  cfg.image_height = 160;
  AberrationModel ab;
  ThreadPool pool(4);
  const std::vector<ImageF> textures = {make_texture("noise", 160, 160, Rng(1)),
                                        make_texture("checker", 160, 160, Rng(2))};
  const std::vector<double> depths = {0.6, 0.9, 1.2};
  const GenResult res = gen_pair_dataset(cfg, ab, textures, depths, 5, tmp.dir, &pool, 12);
  // 2 textures x 3 depths: 6 sharp, 18 blurred.
  CHECK(res.manifest.records.size() == 24);
  int sharp = 0, blurred = 0;
  for (const auto& r : res.manifest.records) {
    (r.role == "sharp" ? sharp : blurred) += 1;
    CHECK(std::filesystem::exists(tmp.dir / r.path));
  }
  CHECK(sharp == 6);
  CHECK(blurred == 18);
  REQUIRE(res.pairs_per_focus.size() == 3);
  for (const int n : res.pairs_per_focus) CHECK(n == 6);
  const Manifest loaded = load_manifest(tmp / "manifest.json");
  CHECK(loaded.records.size() == 24);
}

TEST_CASE("one plane stack and two plane scene have consistent shapes") {
  CameraConfig cfg = test_camera();
  cfg.image_width = 120;
  cfg.image_height = 100;
  AberrationModel ideal;
  ideal.coma_strength = 0.0;
  ideal.field_curvature_m = 0.0;
  ideal.astig_ratio = 1.0;
  ThreadPool pool(4);
  const ImageF tex = make_texture("noise", 120, 100, Rng(3));
  const auto stack = render_one_plane_stack(cfg, ideal, tex, 0.8, &pool, 12);
  REQUIRE(stack.size() == 3);
  CHECK(stack[0].width() == 120 - 24);
  CHECK(stack[0].height() == 100 - 24);

  const ImageF bg = make_texture("checker", 120, 100, Rng(4));
  const ImageF mask = make_mask("disk", 120, 100, 0.5);
  const TwoPlaneScene scene = gen_two_plane_scene(cfg, ideal, tex, bg, 0.65, 1.1, mask, &pool, 12);
  REQUIRE(scene.stack.size() == 3);
  CHECK(scene.stack[0].width() == 96);
  CHECK(scene.depth.width == 96);
  CHECK(scene.depth.height == 76);
  std::set<double> depths;
  for (std::size_t i = 0; i < scene.depth.depths.size(); ++i) {
    if (scene.depth.valid[i]) depths.insert(scene.depth.depths[i]);
  }
  CHECK(depths == std::set<double>{0.65, 1.1});
}

TEST_CASE("grid built from the optical model reproduces it at bin centers") {
  const CameraConfig cfg = test_camera();
  AberrationModel ab;
  const PsfGrid grid = grid_from_oracle(cfg, ab, 1, linspace(0.1, 0.9, 3),
                                        linspace(0.6, 1.2, 4), 12);
  CHECK(grid.focus_index == 1);
  for (int i = 0; i < grid.n_ih(); ++i) {
    for (int j = 0; j < grid.n_depth(); ++j) {
      const PsfKernel want =
          oracle_psf(cfg, ab, grid.ih_centers[static_cast<std::size_t>(i)], 0.0,
                     grid.depth_centers[static_cast<std::size_t>(j)], 1, 12);
      const PsfKernel got = grid.materialize_bin(i, j);
      double mae = 0;
      for (std::size_t t = 0; t < want.values().size(); ++t) {
        mae += std::abs(want.values()[t] - got.values()[t]);
      }
      mae /= static_cast<double>(want.values().size());
      CHECK(mae < 1e-8);
    }
  }
}
