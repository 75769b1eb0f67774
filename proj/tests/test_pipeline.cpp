#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "defocus/errors.hpp"
#include "defocus/image.hpp"
#include "defocus/optics.hpp"
#include "defocus/pipeline.hpp"
#include "test_support.hpp"

using namespace defocus;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct PipelineFixture {
  testsup::TempDir tmp{"pipeline"};
  std::string data_dir;
  std::string manifest;
  std::string grid0;
  std::string grid1;
  std::string fit_log;
  std::string scene_dir;
  json gen_summary;
  json fit_summary0;
  json render_summary;
};

json base_fit_config(const PipelineFixture& f, int focus_index) {
  json cfg;
  cfg["manifest"] = f.manifest;
  cfg["focus_index"] = focus_index;
  cfg["mode"] = "invariant";
  cfg["radius"] = 6;
  cfg["patch_size"] = 24;
  cfg["batch"] = 4;
  cfg["steps"] = 60;
  cfg["depth_bins"] = 3;
  cfg["threads"] = 2;
  return cfg;
}

// One tiny ideal two-focus dataset, invariant grids and a rendered scene,
// built once and shared by the cases below.
const PipelineFixture& fx() {
  static PipelineFixture f;
  static const bool built = [] {
    f.data_dir = (f.tmp / "data").string();
    f.manifest = (f.tmp / "data" / "manifest.json").string();
    f.grid0 = (f.tmp / "g0.psfg").string();
    f.grid1 = (f.tmp / "g1.psfg").string();
    f.fit_log = (f.tmp / "fit.log").string();
    f.scene_dir = (f.tmp / "scene").string();
    json gen;
    gen["out_dir"] = f.data_dir;
    gen["seed"] = 3;
    gen["radius"] = 6;
    gen["camera"] = {{"image_width", 160}, {"image_height", 160},
                     {"focus_distances_m", {0.5, 1.3}}};
    gen["aberration"] = {{"ideal", true}};
    gen["textures"] = {"noise"};
    gen["depths_m"] = {0.7, 0.9, 1.1};
    gen["threads"] = 2;
    f.gen_summary = run_gen(gen);
    json fit0 = base_fit_config(f, 0);
    fit0["out"] = f.grid0;
    fit0["log"] = f.fit_log;
    f.fit_summary0 = run_fit(fit0);
    json fit1 = base_fit_config(f, 1);
    fit1["out"] = f.grid1;
    run_fit(fit1);
    json render;
    render["out_dir"] = f.scene_dir;
    render["seed"] = 7;
    render["radius"] = 6;
    render["camera"] = {{"image_width", 140}, {"image_height", 140},
                        {"focus_distances_m", {0.5, 1.3}}};
    render["aberration"] = {{"ideal", true}};
    render["scene"] = {{"type", "one-plane"}, {"texture", "noise"}, {"depth_m", 0.8}};
    render["threads"] = 2;
    f.render_summary = run_render(render);
    return true;
  }();
  (void)built;
  return f;
}

std::string read_text(const fs::path& path) { return testsup::read_bytes(path); }

// Message check that keeps the thrown type visible in the assertion.
template <typename E, typename Fn>
void expect_error_containing(Fn&& fn, const std::string& needle) {
  try {
    fn();
    FAIL_CHECK("expected an error mentioning '" << needle << "', none was thrown");
  } catch (const E& e) {
    CHECK(std::string(e.what()).find(needle) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("gen writes a reloadable dataset with the configured camera") {
  const PipelineFixture& f = fx();
  CHECK(f.gen_summary.at("n_records").get<int>() == 9);
  CHECK(f.gen_summary.at("pairs_per_focus") == json({3, 3}));
  CHECK(fs::exists(f.manifest));
  const Manifest m = load_manifest(f.manifest);
  CHECK(m.kind == "pair_dataset");
  REQUIRE(m.camera.n_focus() == 2);
  // Overriding the focus list resets breathing to match its length.
  CHECK(m.camera.breathing_mags == std::vector<double>{1.0, 1.0});
  CHECK(m.aberration.is_ideal());
  for (const auto& rec : m.records) {
    CHECK(fs::exists(fs::path(f.data_dir) / rec.path));
  }
}

TEST_CASE("gen requires exactly one depth specification") {
  json cfg;
  cfg["out_dir"] = "unused";
  CHECK_THROWS_AS(run_gen(cfg), ConfigError);
  cfg["depths_m"] = {0.7, 0.9};
  cfg["depth_count"] = 3;
  CHECK_THROWS_AS(run_gen(cfg), ConfigError);
}

TEST_CASE("fit summary reports losses and the written grid's hash") {
  const PipelineFixture& f = fx();
  CHECK(f.fit_summary0.at("mode") == "invariant");
  CHECK(f.fit_summary0.at("steps").get<int>() == 60);
  CHECK(f.fit_summary0.at("n_pairs").get<int>() == 3);
  CHECK(f.fit_summary0.at("final_loss").get<double>() > 0.0);
  CHECK(f.fit_summary0.at("grid_hash") == file_hash_hex(f.grid0));
  const std::string log = read_text(f.fit_log);
  CHECK(log.find("mode=invariant") != std::string::npos);
  CHECK(log.find("# step lr loss") != std::string::npos);
}

TEST_CASE("fit refuses the cartesian variant and unknown keys") {
  const PipelineFixture& f = fx();
  json cfg = base_fit_config(f, 0);
  cfg["out"] = (f.tmp / "never.psfg").string();
  cfg["mode"] = "xy-cartesian";
  expect_error_containing<ConfigError>([&] { run_fit(cfg); }, "ablate");
  json bogus = base_fit_config(f, 0);
  bogus["bogus"] = 1;
  expect_error_containing<ConfigError>([&] { run_fit(bogus); }, "unknown key 'bogus'");
}

TEST_CASE("eval psf writes a canonical report with provenance hashes") {
  const PipelineFixture& f = fx();
  const std::string out = (f.tmp / "eval_psf.json").string();
  json cfg;
  cfg["grid"] = f.grid0;
  cfg["train_manifest"] = f.manifest;
  cfg["out"] = out;
  cfg["holdout"] = {{"ih_count", 2}, {"theta_count", 2}, {"depth_count", 2}};
  const json summary = run_eval_psf(cfg);
  CHECK(summary.at("model_kind") == "grid");
  CHECK(summary.at("n_records").get<int>() == 8);
  // An invariant fit of an aberration-free camera tracks the oracle closely.
  CHECK(summary.at("aggregate_mae").get<double>() < 0.05);

  const std::string text = read_text(out);
  const json report = json::parse(text);
  CHECK(report.at("format") == "defocus-eval-psf-v1");
  CHECK(report.at("provenance").at("model_hash") == file_hash_hex(f.grid0));
  CHECK(report.at("provenance").at("manifest_hash") == file_hash_hex(f.manifest));
  // Holdout depths are derived as training-gap midpoints.
  const auto holdout_depths = report.at("holdout").at("depths_m").get<std::vector<double>>();
  REQUIRE(holdout_depths.size() == 2);
  CHECK(holdout_depths[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(holdout_depths[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.at("records").size() == 8);
  // Reports are written in canonical form: reparsing and redumping is a noop.
  CHECK(text == report.dump(2) + "\n");
}

TEST_CASE("eval psf refuses holdout depths seen in training") {
  const PipelineFixture& f = fx();
  json cfg;
  cfg["grid"] = f.grid0;
  cfg["train_manifest"] = f.manifest;
  cfg["out"] = (f.tmp / "never.json").string();
  cfg["holdout"] = {{"depths_m", {0.9}}};
  CHECK_THROWS_AS(run_eval_psf(cfg), ProtocolError);
}

TEST_CASE("eval psf takes exactly one model") {
  const PipelineFixture& f = fx();
  json cfg;
  cfg["train_manifest"] = f.manifest;
  cfg["out"] = "never.json";
  CHECK_THROWS_AS(run_eval_psf(cfg), ConfigError);
  cfg["grid"] = f.grid0;
  cfg["baseline"] = "b.json";
  CHECK_THROWS_AS(run_eval_psf(cfg), ConfigError);
}

TEST_CASE("render, depth and eval-depth chain on a one-plane scene") {
  const PipelineFixture& f = fx();
  const std::string& scene_dir = f.scene_dir;
  const json& rs = f.render_summary;
  CHECK(rs.at("scene_type") == "one-plane");
  CHECK(rs.at("n_images").get<int>() == 2);
  CHECK(rs.at("image_width").get<int>() == 128);
  CHECK(fs::exists(fs::path(scene_dir) / "stack_f00.pfm"));
  CHECK(fs::exists(fs::path(scene_dir) / "stack_f01.pfm"));
  CHECK(fs::exists(fs::path(scene_dir) / "depth_gt.pfm"));

  const std::string depth_dir = (f.tmp / "depth").string();
  json depth;
  depth["stack_manifest"] = (fs::path(scene_dir) / "manifest.json").string();
  depth["grids"] = {f.grid0, f.grid1};
  depth["out_dir"] = depth_dir;
  depth["candidates_m"] = {0.7, 0.8, 0.9, 1.0, 1.1};
  depth["threads"] = 2;
  const json ds = run_depth(depth);
  CHECK(ds.at("mode") == "ih-variant");
  CHECK(ds.at("n_candidates").get<int>() == 5);
  CHECK(ds.at("valid_fraction").get<double>() > 0.5);
  REQUIRE(ds.contains("mae_m"));  // manifest carries ground truth
  const double mae = ds.at("mae_m").get<double>();
  CHECK(mae >= 0.0);
  CHECK(mae < 0.25);
  CHECK(fs::exists(fs::path(depth_dir) / "depth.pfm"));
  CHECK(fs::exists(fs::path(depth_dir) / "depth_mask.pgm"));
  CHECK(fs::exists(fs::path(depth_dir) / "depth_vis.pgm"));

  json ev;
  ev["est"] = (fs::path(depth_dir) / "depth.pfm").string();
  ev["est_mask"] = (fs::path(depth_dir) / "depth_mask.pgm").string();
  ev["gt"] = (fs::path(scene_dir) / "depth_gt.pfm").string();
  ev["out"] = (f.tmp / "eval_depth.json").string();
  const json es = run_eval_depth(ev);
  CHECK(es.at("format") == "defocus-eval-depth-v1");
  // Same maps modulo the float32 file round trip.
  CHECK(es.at("mae_m").get<double>() == doctest::Approx(mae).epsilon(1e-5));
  CHECK(es.at("n_joint_valid").get<std::size_t>() == ds.at("n_joint_valid").get<std::size_t>());
  const json report = json::parse(read_text(ev["out"].get<std::string>()));
  CHECK(report.at("provenance").at("est_hash") ==
        file_hash_hex(fs::path(depth_dir) / "depth.pfm"));
}

TEST_CASE("depth rejects wrong grid lists") {
  const PipelineFixture& f = fx();
  json depth;
  depth["stack_manifest"] = (fs::path(f.scene_dir) / "manifest.json").string();
  depth["out_dir"] = (f.tmp / "never").string();
  depth["candidates_m"] = {0.7, 0.9, 1.1};
  depth["grids"] = {f.grid0};
  expect_error_containing<ConfigError>([&] { run_depth(depth); }, "one grid per focus");
  depth["grids"] = {f.grid1, f.grid0};
  CHECK_THROWS_AS(run_depth(depth), DataError);  // focus order must match
}

TEST_CASE("mosaic defaults to the grid's own bin centers") {
  const PipelineFixture& f = fx();
  const std::string out = (f.tmp / "mosaic.pgm").string();
  json cfg;
  cfg["grid"] = f.grid0;
  cfg["out"] = out;
  const json s = run_mosaic(cfg);
  // Invariant grid: one ih column, three depth rows of 14 px tiles.
  CHECK(s.at("n_ih").get<int>() == 1);
  CHECK(s.at("n_depth").get<int>() == 3);
  CHECK(s.at("width").get<int>() == 13);
  CHECK(s.at("height").get<int>() == 41);
  const ImageF img = read_image_pgm(out);
  CHECK(img.width() == 13);
  CHECK(img.height() == 41);
  json bad = cfg;
  bad["depths_m"] = {0.8};
  bad["depth_count"] = 2;
  expect_error_containing<ConfigError>([&] { run_mosaic(bad); }, "not both");
}

TEST_CASE("ablate runs all three variants and reports their ratios") {
  const PipelineFixture& f = fx();
  const std::string out = (f.tmp / "ablation.json").string();
  json cfg;
  cfg["manifest"] = f.manifest;
  cfg["out"] = out;
  cfg["focus_index"] = 0;
  cfg["radius"] = 4;
  cfg["patch_size"] = 16;
  cfg["batch"] = 4;
  cfg["steps"] = 20;
  cfg["ih_bins"] = 2;
  cfg["depth_bins"] = 2;
  cfg["xy_bins"] = 2;
  cfg["seed"] = 5;
  cfg["threads"] = 2;
  cfg["holdout"] = {{"ih_count", 2}, {"theta_count", 2}, {"depth_count", 2}};
  const json s = run_ablate(cfg);
  REQUIRE(s.at("rows").size() == 3);
  CHECK(s.at("rows")[0].at("mode") == "ih-polar");
  CHECK(s.at("rows")[1].at("mode") == "xy-cartesian");
  CHECK(s.at("rows")[2].at("mode") == "invariant");
  for (const auto& row : s.at("rows")) {
    CHECK(row.at("aggregate_mae").get<double>() > 0.0);
  }
  CHECK(s.at("ratio_ih_polar_over_xy").get<double>() > 0.0);
  CHECK(s.at("ratio_ih_polar_over_invariant").get<double>() > 0.0);
  CHECK(json::parse(read_text(out)).at("format") == "defocus-ablation-v1");

  json fixed = cfg;
  fixed["mode"] = "ih-polar";
  expect_error_containing<ConfigError>([&] { run_ablate(fixed); }, "'mode' is fixed");
}

TEST_CASE("every command rejects unknown keys by name") {
  const PipelineFixture& f = fx();
  const json bogus{{"bogus", 1}};
  expect_error_containing<ConfigError>([&] { run_gen(bogus); }, "gen: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_fit(bogus); }, "fit: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_render(bogus); }, "render: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_depth(bogus); }, "depth: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_eval_psf(bogus); },
                                       "eval-psf: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_eval_depth(bogus); },
                                       "eval-depth: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_ablate(bogus); }, "ablate: unknown key 'bogus'");
  expect_error_containing<ConfigError>([&] { run_mosaic(bogus); }, "mosaic: unknown key 'bogus'");

  json gen;
  gen["out_dir"] = "unused";
  gen["depths_m"] = {0.8};
  gen["camera"] = {{"bogus", 1}};
  expect_error_containing<ConfigError>([&] { run_gen(gen); }, "gen.camera: unknown key 'bogus'");
  json render;
  render["out_dir"] = "unused";
  render["scene"] = {{"type", "one-plane"}, {"bogus", 1}};
  expect_error_containing<ConfigError>([&] { run_render(render); },
                                       "render.scene: unknown key 'bogus'");
  json ev;
  ev["grid"] = f.grid0;
  ev["train_manifest"] = f.manifest;
  ev["out"] = "never.json";
  ev["holdout"] = {{"bogus", 1}};
  expect_error_containing<ConfigError>([&] { run_eval_psf(ev); },
                                       "holdout: unknown key 'bogus'");
}

TEST_CASE("file hashes match the published 64-bit fnv-1a vectors") {
  testsup::TempDir tmp("hash");
  const fs::path empty = tmp / "empty.bin";
  const fs::path a = tmp / "a.bin";
  const fs::path abc = tmp / "abc.bin";
  std::ofstream(empty).close();
  std::ofstream(a) << "a";
  std::ofstream(abc) << "abc";
  CHECK(file_hash_hex(empty) == "cbf29ce484222325");
  CHECK(file_hash_hex(a) == "af63dc4c8601ec8c");
  CHECK(file_hash_hex(abc) == "e71fa2190541574b");
  CHECK_THROWS_AS(file_hash_hex(tmp / "missing.bin"), IoError);
}
