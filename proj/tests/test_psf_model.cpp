#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "defocus/errors.hpp"
#include "defocus/geometry.hpp"
#include "defocus/kernel.hpp"
#include "defocus/psf_grid.hpp"
#include "defocus/rng.hpp"
#include "test_support.hpp"

using namespace defocus;

namespace {

// Independent quadruple-loop true convolution (kernel flipped), valid region.
ImageF reference_convolve(const ImageF& img, const PsfKernel& k) {
  const int K = k.radius();
  const int side = 2 * K + 1;
  const int ow = img.width() - 2 * K;
  const int oh = img.height() - 2 * K;
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          // Output pixel maps to input center (x + K, y + K); flipping the
          // kernel turns correlation into convolution.
          acc += k.at(r, c) * img.at(x + 2 * K - c, y + 2 * K - r);
        }
      }
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return ImageF::from_data(ow, oh, std::move(out));
}

PsfKernel random_kernel(int radius, Rng& rng) {
  const int len = (2 * radius + 1) * (2 * radius + 1);
  std::vector<double> v(static_cast<std::size_t>(len));
  for (auto& x : v) x = 0.05 + rng.next_unit();
  return PsfKernel::from_values_normalized(radius, std::move(v));
}

}  // namespace

TEST_CASE("delta and uniform kernels have the expected entries") {
  const PsfKernel d = PsfKernel::delta(2);
  CHECK(d.at(2, 2) == 1.0);
  CHECK(d.at(0, 0) == 0.0);
  CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-15));

  const PsfKernel u = PsfKernel::uniform(12);
  CHECK(u.at(0, 0) == doctest::Approx(1.0 / 625).epsilon(1e-15));
  CHECK(u.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("from_values validates mass and normalizes") {
  CHECK_THROWS_AS(PsfKernel::from_values(1, std::vector<double>(9, 0.0)), ParameterError);
  CHECK_THROWS_AS(PsfKernel::from_values(1, std::vector<double>(4, 0.1)), DimensionError);
  std::vector<double> v(9, 0.0);
  v[4] = 2.0;
  v[5] = 2.0;
  const PsfKernel k = PsfKernel::from_values_normalized(1, v);
  CHECK(k.at(1, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(k.at(1, 2) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("centroid is zero for symmetric kernels and tracks a shifted delta") {
  const PsfKernel u = PsfKernel::uniform(3);
  const auto c0 = u.centroid();
  CHECK(c0[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(c0[1] == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<double> v(49, 0.0);
  // Row 1, col 5 in a radius-3 kernel: dx = +2, dy_up = +2 (rows grow down).
  v[1 * 7 + 5] = 1.0;
  const PsfKernel s = PsfKernel::from_values(3, std::move(v));
  const auto c = s.centroid();
  CHECK(c[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("valid convolution matches the quadruple-loop reference") {
  Rng rng(5);
  const ImageF img = testsup::random_image(17, 13, rng);
  const PsfKernel k = random_kernel(3, rng);
  const ImageF got = convolve_valid(img, k);
  const ImageF want = reference_convolve(img, k);
  REQUIRE(got.width() == want.width());
  REQUIRE(got.height() == want.height());
  for (int y = 0; y < got.height(); ++y) {
    for (int x = 0; x < got.width(); ++x) {
      CHECK(got.at(x, y) == doctest::Approx(want.at(x, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("delta kernel convolution is a centered crop, bit for bit") {
  Rng rng(6);
  const ImageF img = testsup::random_image(20, 16, rng);
  const ImageF out = convolve_valid(img, PsfKernel::delta(4));
  REQUIRE(out.width() == 12);
  REQUIRE(out.height() == 8);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      CHECK(out.at(x, y) == img.at(x + 4, y + 4));
    }
  }
}

TEST_CASE("convolution is linear in the kernel") {
  Rng rng(7);
  const ImageF img = testsup::random_image(15, 15, rng);
  const int len = 25;
  std::vector<double> a(len), b(len);
  for (auto& x : a) x = rng.next_unit() + 0.01;
  for (auto& x : b) x = rng.next_unit() + 0.01;
  std::vector<double> mix(len);
  double asum = 0, bsum = 0;
  for (int i = 0; i < len; ++i) {
    asum += a[i];
    bsum += b[i];
  }
  for (int i = 0; i < len; ++i) mix[i] = (0.5 * a[i] / asum) + (0.5 * b[i] / bsum);
  const ImageF oa = convolve_valid(img, PsfKernel::from_values_normalized(2, a));
  const ImageF ob = convolve_valid(img, PsfKernel::from_values_normalized(2, b));
  const ImageF om = convolve_valid(img, PsfKernel::from_values(2, mix));
  for (int y = 0; y < om.height(); ++y) {
    for (int x = 0; x < om.width(); ++x) {
      CHECK(om.at(x, y) ==
            doctest::Approx(0.5 * oa.at(x, y) + 0.5 * ob.at(x, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax of zeros is uniform; one hot logit dominates") {
  const auto u = softmax(std::vector<double>(625, 0.0));
  for (const double p : u) CHECK(p == doctest::Approx(1.0 / 625).epsilon(1e-14));
  std::vector<double> l(625, 0.0);
  l[100] = 20.0;
  const auto p = softmax(l);
  CHECK(p[100] > 0.999);
  const PsfKernel k = materialize_kernel(l, 12);
  CHECK(k.values()[100] == doctest::Approx(p[100]).epsilon(1e-12));
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(8);
  const int n = 49;
  std::vector<double> logits(n), g(n);
  for (auto& x : logits) x = rng.next_real(-1.0, 1.0);
  for (auto& x : g) x = rng.next_real(-1.0, 1.0);
  const auto probs = softmax(logits);
  const auto grad = softmax_backprop(probs, g);
  auto f = [&](const std::vector<double>& l) {
    const auto p = softmax(l);
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += g[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)];
    return acc;
  };
  const double h = 1e-6;
  for (int i = 0; i < n; i += 5) {
    auto lp = logits, lm = logits;
    lp[static_cast<std::size_t>(i)] += h;
    lm[static_cast<std::size_t>(i)] -= h;
    const double fd = (f(lp) - f(lm)) / (2 * h);
    CHECK(grad[static_cast<std::size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("softmax gradient is shift invariant") {
  Rng rng(9);
  const int n = 25;
  std::vector<double> logits(n), g(n);
  for (auto& x : logits) x = rng.next_real(-2.0, 2.0);
  for (auto& x : g) x = rng.next_real(-1.0, 1.0);
  const auto p = softmax(logits);
  auto shifted = logits;
  for (auto& x : shifted) x += 3.7;
  const auto ps = softmax(shifted);
  const auto ga = softmax_backprop(p, g);
  const auto gb = softmax_backprop(ps, g);
  for (int i = 0; i < n; ++i) {
    CHECK(ga[static_cast<std::size_t>(i)] ==
          doctest::Approx(gb[static_cast<std::size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("renormalization gradient matches finite differences") {
  Rng rng(10);
  const int n = 9;
  std::vector<double> r(n), g(n);
  for (auto& x : r) x = 0.1 + rng.next_unit();
  for (auto& x : g) x = rng.next_real(-1.0, 1.0);
  double s = 0;
  for (const double x : r) s += x;
  std::vector<double> y(r);
  for (auto& x : y) x /= s;
  const auto grad = renorm_backprop(y, s, g);
  auto f = [&](const std::vector<double>& rv) {
    double sum = 0, acc = 0;
    for (const double x : rv) sum += x;
    for (int i = 0; i < n; ++i) acc += g[static_cast<std::size_t>(i)] * rv[static_cast<std::size_t>(i)] / sum;
    return acc;
  };
  const double h = 1e-7;
  for (int i = 0; i < n; ++i) {
    auto rp = r, rm = r;
    rp[static_cast<std::size_t>(i)] += h;
    rm[static_cast<std::size_t>(i)] -= h;
    const double fd = (f(rp) - f(rm)) / (2 * h);
    CHECK(grad[static_cast<std::size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("rotation by zero is the identity") {
  Rng rng(12);
  const PsfKernel k = random_kernel(4, rng);
  const PsfKernel r = rotate_kernel(k, 0.0);
  for (std::size_t i = 0; i < k.values().size(); ++i) {
    CHECK(r.values()[i] == doctest::Approx(k.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("quarter turns compose exactly and full turn returns home") {
  Rng rng(13);
  const PsfKernel k = random_kernel(4, rng);
  const double q = std::numbers::pi / 2;
  const PsfKernel k90 = rotate_kernel(k, q);
  const PsfKernel k180a = rotate_kernel(k90, q);
  const PsfKernel k180b = rotate_kernel(k, 2 * q);
  for (std::size_t i = 0; i < k.values().size(); ++i) {
    CHECK(k180a.values()[i] == doctest::Approx(k180b.values()[i]).epsilon(1e-10));
  }
  PsfKernel full = k;
  for (int t = 0; t < 4; ++t) full = rotate_kernel(full, q);
  for (std::size_t i = 0; i < k.values().size(); ++i) {
    CHECK(full.values()[i] == doctest::Approx(k.values()[i]).epsilon(1e-10));
  }
}

TEST_CASE("rotation turns the centroid by theta") {
  std::vector<double> v(81, 1e-6);
  v[4 * 9 + 7] = 1.0;  // centroid near (+3, 0)
  const PsfKernel k = PsfKernel::from_values_normalized(4, std::move(v));
  const auto c0 = k.centroid();
  for (const double theta : {0.4, std::numbers::pi / 3, 2.2}) {
    const PsfKernel r = rotate_kernel(k, theta);
    const auto c = r.centroid();
    const double ex = c0[0] * std::cos(theta) - c0[1] * std::sin(theta);
    const double ey = c0[0] * std::sin(theta) + c0[1] * std::cos(theta);
    CHECK(std::hypot(c[0] - ex, c[1] - ey) < 0.1);
  }
}

TEST_CASE("rotation adjoint satisfies the inner product identity") {
  Rng rng(14);
  const int radius = 3;
  const int len = 49;
  std::vector<double> p(len), g(len);
  for (auto& x : p) x = rng.next_unit();
  for (auto& x : g) x = rng.next_real(-1.0, 1.0);
  for (const double theta : {0.0, 0.3, 1.7, 4.0}) {
    const auto rp = rotate_values_raw(p, radius, theta);
    const auto bg = rotation_backprop(g, radius, theta);
    double lhs = 0, rhs = 0;
    for (int i = 0; i < len; ++i) {
      lhs += rp[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
      rhs += p[static_cast<std::size_t>(i)] * bg[static_cast<std::size_t>(i)];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("grid query at a bin center equals the materialized bin") {
  PsfGrid grid = make_uniform_grid(0, 3, 2, {0.1, 0.5, 0.9}, {0.5, 1.0});
  Rng rng(15);
  for (auto& p : grid.params) p = rng.next_real(-0.5, 0.5);
  const PsfKernel direct = grid.materialize_bin(1, 0);
  const PsfKernel queried = grid.query(0.5, 0.5);
  for (std::size_t i = 0; i < direct.values().size(); ++i) {
    CHECK(queried.values()[i] == direct.values()[i]);  // bit exact
  }
  const GridBinMix mix = query_mix(grid, 0.5, 0.5);
  REQUIRE(mix.parts.size() == 1);
  CHECK(mix.parts[0].i_ih == 1);
  CHECK(mix.parts[0].i_depth == 0);
  CHECK(mix.parts[0].w == 1.0);
}

TEST_CASE("grid query midway between bins is the renormalized mean") {
  PsfGrid grid = make_uniform_grid(0, 1, 1, {0.2, 0.8}, {1.0});
  Rng rng(16);
  for (auto& p : grid.params) p = rng.next_real(-1.0, 1.0);
  const PsfKernel a = grid.materialize_bin(0, 0);
  const PsfKernel b = grid.materialize_bin(1, 0);
  const PsfKernel mid = grid.query(0.5, 1.0);
  for (std::size_t i = 0; i < mid.values().size(); ++i) {
    const double want = 0.5 * (a.values()[i] + b.values()[i]);
    CHECK(mid.values()[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("grid queries clamp outside the center range") {
  PsfGrid grid = make_uniform_grid(0, 1, 1, {0.2, 0.8}, {0.6, 1.2});
  Rng rng(17);
  for (auto& p : grid.params) p = rng.next_real(-1.0, 1.0);
  const PsfKernel lo = grid.query(0.0, 0.3);
  const PsfKernel first = grid.materialize_bin(0, 0);
  for (std::size_t i = 0; i < lo.values().size(); ++i) {
    CHECK(lo.values()[i] == first.values()[i]);
  }
  const PsfKernel hi = grid.query(2.0, 9.0);
  const PsfKernel last = grid.materialize_bin(1, 1);
  for (std::size_t i = 0; i < hi.values().size(); ++i) {
    CHECK(hi.values()[i] == last.values()[i]);
  }
}

TEST_CASE("query_mix weights are convex and reproduce query bit for bit") {
  PsfGrid grid = make_uniform_grid(0, 1, 2, {0.1, 0.4, 0.9}, {0.5, 0.8, 1.3});
  Rng rng(18);
  for (auto& p : grid.params) p = rng.next_real(-1.0, 1.0);
  for (const double ih : {0.13, 0.4, 0.77}) {
    for (const double d : {0.55, 0.8, 1.11}) {
      const GridBinMix mix = query_mix(grid, ih, d);
      double wsum = 0;
      for (const auto& part : mix.parts) {
        CHECK(part.w > 0.0);
        wsum += part.w;
      }
      CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
      const PsfKernel q = grid.query(ih, d);
      for (std::size_t i = 0; i < q.values().size(); ++i) {
        CHECK(mix.kernel.values()[i] == q.values()[i]);
      }
    }
  }
}

TEST_CASE("grid file round trips bit exact after f32 quantization") {
  testsup::TempDir tmp("grid_io");
  PsfGrid grid = make_uniform_grid(1, 3, 12, linspace(0.0, 1.0, 9), linspace(0.5, 1.4, 12));
  Rng rng(19);
  for (auto& p : grid.params) p = rng.next_real(-3.0, 3.0);
  quantize_params_f32(grid);
  save_psf_grid(grid, tmp / "a.psfg");
  const PsfGrid back = load_psf_grid(tmp / "a.psfg");
  CHECK(back.focus_index == 1);
  CHECK(back.n_focus == 3);
  CHECK(back.radius == 12);
  REQUIRE(back.params.size() == grid.params.size());
  for (std::size_t i = 0; i < grid.params.size(); ++i) {
    CHECK(back.params[i] == grid.params[i]);
  }
  save_psf_grid(back, tmp / "b.psfg");
  CHECK(testsup::same_bytes(tmp / "a.psfg", tmp / "b.psfg"));
}

TEST_CASE("grid loader rejects a corrupted header") {
  testsup::TempDir tmp("grid_bad");
  PsfGrid grid = make_uniform_grid(0, 1, 2, {0.5}, {1.0});
  save_psf_grid(grid, tmp / "ok.psfg");
  auto bytes = testsup::read_bytes(tmp / "ok.psfg");
  bytes[0] = 'X';
  {
    std::ofstream out(tmp / "bad.psfg", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_psf_grid(tmp / "bad.psfg"), FormatError);
  bytes = testsup::read_bytes(tmp / "ok.psfg");
  bytes.resize(bytes.size() - 3);
  {
    std::ofstream out(tmp / "short.psfg", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_psf_grid(tmp / "short.psfg"), FormatError);
}
