#pragma once

#include <vector>

namespace defocus {

// Normalized polar position on the sensor. ih is radial distance from the
// image center scaled so the corner is 1; theta is measured counterclockwise
// from the +x axis with y pointing up (image rows grow downward), in [0, 2pi).
struct PolarPos {
  double ih = 0.0;
  double theta = 0.0;
};

// Center is ((w-1)/2, (h-1)/2); (x, y) may be fractional (patch centers).
PolarPos to_polar(double x, double y, int width, int height);

// Distance from image center to a corner, in pixels.
double corner_radius(int width, int height);

// n evenly spaced values covering [lo, hi] inclusive; n = 1 gives the
// midpoint.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace defocus
