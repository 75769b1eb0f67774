#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "defocus/dfd.hpp"
#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"
#include "defocus/optics.hpp"
#include "defocus/thread_pool.hpp"
#include "test_support.hpp"

using namespace defocus;

namespace {

constexpr double kTrueDepth = 0.8;

struct DfdFixture {
  CameraConfig cam;
  AberrationModel ab;
  std::vector<PsfGrid> grids;
  FocalStack stack;  // one textured plane at kTrueDepth
  DfdConfig cfg;
};

// Ideal two-focus setup with oracle grids whose depth bins are exactly the
// candidate list, shared across the cases below.
const DfdFixture& fixture() {
  static const DfdFixture fx = [] {
    DfdFixture f;
    f.cam.focus_distances_m = {0.5, 1.3};
    f.cam.breathing_mags = {1.0, 1.0};
    f.cam.image_width = 201;
    f.cam.image_height = 201;
    f.ab = AberrationModel{0.0, 0.0, 1.0};
    f.cfg.candidates_m = {0.65, 0.8, 0.95, 1.1};
    for (int fi = 0; fi < 2; ++fi) {
      f.grids.push_back(grid_from_oracle(f.cam, f.ab, fi, linspace(0.0, 1.0, 3),
                                         f.cfg.candidates_m));
    }
    ThreadPool pool(4);
    Rng rng(123);
    const ImageF tex = make_texture("noise", 201, 201, rng);
    f.stack.images = render_one_plane_stack(f.cam, f.ab, tex, kTrueDepth, &pool);
    f.stack.camera = f.cam;
    f.stack.validate();
    return f;
  }();
  return fx;
}

ImageF constant_image(int w, int h, double v) {
  return ImageF::from_data(w, h, std::vector<double>(static_cast<std::size_t>(w) * h, v));
}

double valid_fraction(const DepthMap& m) {
  double n = 0;
  for (const std::uint8_t v : m.valid) n += v;
  return n / static_cast<double>(m.valid.size());
}

}  // namespace

TEST_CASE("pair cost bottoms out at the true depth") {
  const DfdFixture& f = fixture();
  std::vector<double> costs;
  for (const double d : f.cfg.candidates_m) {
    costs.push_back(pair_cost(f.stack, f.grids, 0, 1, 88, 88, d, f.cfg));
  }
  const std::size_t best =
      static_cast<std::size_t>(std::min_element(costs.begin(), costs.end()) - costs.begin());
  CHECK(f.cfg.candidates_m[best] == kTrueDepth);
  // At the true depth the two cross-blurred patches agree to the loss floor.
  CHECK(costs[best] < 0.1 * costs[best == 0 ? 1 : best - 1]);
}

TEST_CASE("depth map recovers a one-plane scene") {
  const DfdFixture& f = fixture();
  ThreadPool pool(4);
  const DepthMap map = estimate_depth(f.stack, f.grids, f.cfg, &pool);
  map.validate();
  CHECK(map.width == f.stack.images.front().width());
  CHECK(map.height == f.stack.images.front().height());
  CHECK(map.d_min == f.cfg.candidates_m.front());
  CHECK(map.d_max == f.cfg.candidates_m.back());
  CHECK(valid_fraction(map) > 0.8);
  double err = 0, exact = 0, n = 0;
  for (std::size_t i = 0; i < map.depths.size(); ++i) {
    if (!map.valid[i]) continue;
    n += 1;
    err += std::abs(map.depths[i] - kTrueDepth);
    exact += std::abs(map.depths[i] - kTrueDepth) < 1e-12 ? 1 : 0;
  }
  REQUIRE(n > 0);
  CHECK(err / n < 0.02);
  CHECK(exact / n > 0.9);
}

TEST_CASE("depth estimation is identical at any pool size") {
  const DfdFixture& f = fixture();
  ThreadPool p1(1), p4(4);
  const DepthMap a = estimate_depth(f.stack, f.grids, f.cfg, &p1);
  const DepthMap b = estimate_depth(f.stack, f.grids, f.cfg, &p4);
  const DepthMap c = estimate_depth(f.stack, f.grids, f.cfg, nullptr);
  CHECK(a.depths == b.depths);
  CHECK(a.valid == b.valid);
  CHECK(a.depths == c.depths);
  CHECK(a.valid == c.valid);
}

TEST_CASE("invariant matching works on an aberration-free scene") {
  const DfdFixture& f = fixture();
  DfdConfig cfg = f.cfg;
  cfg.mode = "invariant";
  ThreadPool pool(4);
  const DepthMap map = estimate_depth(f.stack, f.grids, cfg, &pool);
  CHECK(valid_fraction(map) > 0.8);
  double err = 0, n = 0;
  for (std::size_t i = 0; i < map.depths.size(); ++i) {
    if (!map.valid[i]) continue;
    n += 1;
    err += std::abs(map.depths[i] - kTrueDepth);
  }
  CHECK(err / n < 0.02);
}

TEST_CASE("textureless scenes come back invalid everywhere") {
  const DfdFixture& f = fixture();
  ThreadPool pool(2);
  FocalStack flat;
  flat.camera = f.cam;
  for (int i = 0; i < 2; ++i) {
    flat.images.push_back(constant_image(177, 177, 0.5));
  }
  const DepthMap map = estimate_depth(flat, f.grids, f.cfg, &pool);
  for (const std::uint8_t v : map.valid) CHECK(v == 0);
  for (const double d : map.depths) CHECK(d == 0.0);
}

TEST_CASE("candidates outside the grid depth range are rejected") {
  const DfdFixture& f = fixture();
  DfdConfig cfg = f.cfg;
  cfg.candidates_m = {0.65, 0.8, 1.3};  // grids end at 1.1
  ThreadPool pool(1);
  CHECK_THROWS_AS(estimate_depth(f.stack, f.grids, cfg, &pool), ConfigError);
}

TEST_CASE("patch must exceed the kernel support") {
  const DfdFixture& f = fixture();
  DfdConfig cfg = f.cfg;
  cfg.patch = 20;  // < 2*12+2
  CHECK_THROWS_AS(estimate_depth(f.stack, f.grids, cfg, nullptr), ConfigError);
}

TEST_CASE("config validation rejects malformed candidate lists") {
  DfdConfig cfg;
  cfg.candidates_m = {0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.candidates_m = {0.5, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.candidates_m = {0.8, 0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.candidates_m = {-0.5, 0.8};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.candidates_m = {0.5, 0.8};
  cfg.validate();
  cfg.mode = "polar";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.mode = "invariant";
  cfg.margin_tau = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("stack validation catches mismatched shapes") {
  const DfdFixture& f = fixture();
  FocalStack bad;
  bad.camera = f.cam;
  bad.images.push_back(constant_image(177, 177, 0.5));
  CHECK_THROWS_AS(bad.validate(), DataError);  // one image for two foci
  bad.images.push_back(constant_image(175, 175, 0.5));
  CHECK_THROWS_AS(bad.validate(), DimensionError);  // sizes differ
  bad.images[1] = constant_image(177, 177, 0.5);
  bad.camera.image_width = 200;  // margin would be odd
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("pair cost rejects bad focus indices and patches off the frame") {
  const DfdFixture& f = fixture();
  CHECK_THROWS_AS(pair_cost(f.stack, f.grids, 0, 0, 88, 88, 0.8, f.cfg), DomainError);
  CHECK_THROWS_AS(pair_cost(f.stack, f.grids, 0, 2, 88, 88, 0.8, f.cfg), DomainError);
  CHECK_THROWS_AS(pair_cost(f.stack, f.grids, 0, 1, 5, 88, 0.8, f.cfg), DimensionError);
}

TEST_CASE("grid list must line up with the camera focus settings") {
  const DfdFixture& f = fixture();
  std::vector<PsfGrid> one = {f.grids[0]};
  CHECK_THROWS_AS(estimate_depth(f.stack, one, f.cfg, nullptr), DataError);
  std::vector<PsfGrid> swapped = {f.grids[1], f.grids[0]};
  CHECK_THROWS_AS(estimate_depth(f.stack, swapped, f.cfg, nullptr), DataError);
}
