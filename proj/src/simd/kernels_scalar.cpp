#include <cmath>
#include <limits>
#include <numbers>

#include "handfit/simd/kernels.hpp"

namespace handfit::simd {

void TriangleSoA::resize(std::size_t n) {
  count = n;
  const std::size_t p = padded(n);
  for (auto* v : {&ax, &ay, &az, &bx, &by, &bz, &cx, &cy, &cz}) v->assign(p, 0.0);
}

void PointSoA::resize(std::size_t n) {
  count = n;
  const std::size_t p = padded(n);
  for (auto* v : {&x, &y, &z}) v->assign(p, 0.0);
}

namespace {

double winding_scalar(const TriangleSoA& t, const std::uint64_t* excluded, double px, double py,
                      double pz) {
  double sum = 0.0;
  for (std::size_t i = 0; i < t.count; ++i) {
    if (test_bit(excluded, i)) continue;
    const double ax = t.ax[i] - px, ay = t.ay[i] - py, az = t.az[i] - pz;
    const double bx = t.bx[i] - px, by = t.by[i] - py, bz = t.bz[i] - pz;
    const double cx = t.cx[i] - px, cy = t.cy[i] - py, cz = t.cz[i] - pz;
    const double la = std::sqrt(ax * ax + ay * ay + az * az);
    const double lb = std::sqrt(bx * bx + by * by + bz * bz);
    const double lc = std::sqrt(cx * cx + cy * cy + cz * cz);
    if (la * lb * lc == 0.0) return std::numeric_limits<double>::quiet_NaN();
    const double det = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx);
    const double ab = ax * bx + ay * by + az * bz;
    const double ac = ax * cx + ay * cy + az * cz;
    const double bc = bx * cx + by * cy + bz * cz;
    const double den = la * lb * lc + ab * lc + ac * lb + bc * la;
    sum += std::atan2(det, den);
  }
  // Each term is half the solid angle.
  return sum * (2.0 / (4.0 * std::numbers::pi));
}

double min_dist2_scalar(const PointSoA& p, const std::uint64_t* eligible, double px, double py,
                        double pz, int* argmin) {
  double best = std::numeric_limits<double>::infinity();
  int idx = -1;
  for (std::size_t i = 0; i < p.count; ++i) {
    if (!test_bit(eligible, i)) continue;
    const double dx = p.x[i] - px, dy = p.y[i] - py, dz = p.z[i] - pz;
    const double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 < best) {
      best = d2;
      idx = static_cast<int>(i);
    }
  }
  if (argmin) *argmin = idx;
  return best;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", &winding_scalar, &min_dist2_scalar};
  return table;
}

}  // namespace handfit::simd
