#include <immintrin.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "handfit/simd/kernels.hpp"

namespace handfit::simd {

namespace {

// All-ones lanes for each 4-bit pattern.
alignas(32) const std::int64_t kLaneMask[16][4] = {
    {0, 0, 0, 0},    {-1, 0, 0, 0},    {0, -1, 0, 0},    {-1, -1, 0, 0},
    {0, 0, -1, 0},   {-1, 0, -1, 0},   {0, -1, -1, 0},   {-1, -1, -1, 0},
    {0, 0, 0, -1},   {-1, 0, 0, -1},   {0, -1, 0, -1},   {-1, -1, 0, -1},
    {0, 0, -1, -1},  {-1, 0, -1, -1},  {0, -1, -1, -1},  {-1, -1, -1, -1},
};

inline __m256d lane_mask(const std::uint64_t* bits, std::size_t i) {
  const unsigned nib = static_cast<unsigned>((bits[i >> 6] >> (i & 63)) & 0xFu);
  return _mm256_castsi256_pd(_mm256_load_si256(reinterpret_cast<const __m256i*>(kLaneMask[nib])));
}

inline __m256d poly(__m256d z, const double* c, int n) {
  __m256d r = _mm256_set1_pd(c[0]);
  for (int i = 1; i < n; ++i) r = _mm256_add_pd(_mm256_mul_pd(r, z), _mm256_set1_pd(c[i]));
  return r;
}

// Cephes atan on [0, 1].
inline __m256d atan01(__m256d x) {
  static constexpr double P[5] = {-8.750608600031904122785e-1, -1.615753718733365076637e1,
                                  -7.500855792314704667340e1, -1.228866684490136173410e2,
                                  -6.485021904942025371773e1};
  static constexpr double Q[6] = {1.0,
                                  2.485846490142306297962e1,
                                  1.650270098316988542046e2,
                                  4.328810604912902668951e2,
                                  4.853903996359136964868e2,
                                  1.945506571482613964425e2};
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d big = _mm256_cmp_pd(x, _mm256_set1_pd(0.66), _CMP_GT_OQ);
  const __m256d xr = _mm256_blendv_pd(x, _mm256_div_pd(_mm256_sub_pd(x, one), _mm256_add_pd(x, one)), big);
  const __m256d base = _mm256_and_pd(big, _mm256_set1_pd(std::numbers::pi / 4.0));
  const __m256d extra = _mm256_and_pd(big, _mm256_set1_pd(0.5 * 6.123233995736765886130e-17));
  const __m256d z = _mm256_mul_pd(xr, xr);
  __m256d r = _mm256_div_pd(_mm256_mul_pd(z, poly(z, P, 5)), poly(z, Q, 6));
  r = _mm256_add_pd(_mm256_mul_pd(xr, r), xr);
  r = _mm256_add_pd(r, extra);
  return _mm256_add_pd(base, r);
}

inline __m256d atan2_pd(__m256d y, __m256d x) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d ay = _mm256_andnot_pd(sign, y);
  const __m256d ax = _mm256_andnot_pd(sign, x);
  const __m256d swap = _mm256_cmp_pd(ay, ax, _CMP_GT_OQ);
  const __m256d num = _mm256_min_pd(ay, ax);
  const __m256d den = _mm256_max_pd(ay, ax);
  const __m256d nz = _mm256_cmp_pd(den, _mm256_setzero_pd(), _CMP_GT_OQ);
  const __m256d ratio = _mm256_and_pd(nz, _mm256_div_pd(num, _mm256_blendv_pd(_mm256_set1_pd(1.0), den, nz)));
  __m256d a = atan01(ratio);
  a = _mm256_blendv_pd(a, _mm256_sub_pd(_mm256_set1_pd(std::numbers::pi / 2.0), a), swap);
  a = _mm256_blendv_pd(a, _mm256_sub_pd(_mm256_set1_pd(std::numbers::pi), a), x);  // sign bit of x
  return _mm256_or_pd(a, _mm256_and_pd(sign, y));
}

inline double hsum(__m256d v) {
  alignas(32) double t[4];
  _mm256_store_pd(t, v);
  return (t[0] + t[1]) + (t[2] + t[3]);
}

__attribute__((target("avx2"))) double winding_avx2(const TriangleSoA& t, const std::uint64_t* excluded,
                                                    double px, double py, double pz) {
  const __m256d qx = _mm256_set1_pd(px), qy = _mm256_set1_pd(py), qz = _mm256_set1_pd(pz);
  const __m256d zero = _mm256_setzero_pd();
  __m256d acc = zero;
  __m256d degenerate = zero;
  const std::size_t n = padded(t.count);
  for (std::size_t i = 0; i < n; i += kLanes) {
    const __m256d skip = lane_mask(excluded, i);
    if (_mm256_movemask_pd(skip) == 0xF) continue;
    const __m256d ax = _mm256_sub_pd(_mm256_loadu_pd(&t.ax[i]), qx);
    const __m256d ay = _mm256_sub_pd(_mm256_loadu_pd(&t.ay[i]), qy);
    const __m256d az = _mm256_sub_pd(_mm256_loadu_pd(&t.az[i]), qz);
    const __m256d bx = _mm256_sub_pd(_mm256_loadu_pd(&t.bx[i]), qx);
    const __m256d by = _mm256_sub_pd(_mm256_loadu_pd(&t.by[i]), qy);
    const __m256d bz = _mm256_sub_pd(_mm256_loadu_pd(&t.bz[i]), qz);
    const __m256d cx = _mm256_sub_pd(_mm256_loadu_pd(&t.cx[i]), qx);
    const __m256d cy = _mm256_sub_pd(_mm256_loadu_pd(&t.cy[i]), qy);
    const __m256d cz = _mm256_sub_pd(_mm256_loadu_pd(&t.cz[i]), qz);
    auto dot = [](__m256d x0, __m256d y0, __m256d z0, __m256d x1, __m256d y1, __m256d z1) {
      return _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(x0, x1), _mm256_mul_pd(y0, y1)), _mm256_mul_pd(z0, z1));
    };
    const __m256d la = _mm256_sqrt_pd(dot(ax, ay, az, ax, ay, az));
    const __m256d lb = _mm256_sqrt_pd(dot(bx, by, bz, bx, by, bz));
    const __m256d lc = _mm256_sqrt_pd(dot(cx, cy, cz, cx, cy, cz));
    const __m256d l3 = _mm256_mul_pd(_mm256_mul_pd(la, lb), lc);
    degenerate = _mm256_or_pd(degenerate, _mm256_andnot_pd(skip, _mm256_cmp_pd(l3, zero, _CMP_EQ_OQ)));
    const __m256d kx = _mm256_sub_pd(_mm256_mul_pd(by, cz), _mm256_mul_pd(bz, cy));
    const __m256d ky = _mm256_sub_pd(_mm256_mul_pd(bz, cx), _mm256_mul_pd(bx, cz));
    const __m256d kz = _mm256_sub_pd(_mm256_mul_pd(bx, cy), _mm256_mul_pd(by, cx));
    const __m256d det = dot(ax, ay, az, kx, ky, kz);
    const __m256d ab = dot(ax, ay, az, bx, by, bz);
    const __m256d ac = dot(ax, ay, az, cx, cy, cz);
    const __m256d bc = dot(bx, by, bz, cx, cy, cz);
    const __m256d den = _mm256_add_pd(
        _mm256_add_pd(_mm256_add_pd(l3, _mm256_mul_pd(ab, lc)), _mm256_mul_pd(ac, lb)), _mm256_mul_pd(bc, la));
    acc = _mm256_add_pd(acc, _mm256_andnot_pd(skip, atan2_pd(det, den)));
  }
  if (_mm256_movemask_pd(degenerate) != 0) return std::numeric_limits<double>::quiet_NaN();
  return hsum(acc) * (2.0 / (4.0 * std::numbers::pi));
}

__attribute__((target("avx2"))) double min_dist2_avx2(const PointSoA& p, const std::uint64_t* eligible,
                                                      double px, double py, double pz, int* argmin) {
  const __m256d qx = _mm256_set1_pd(px), qy = _mm256_set1_pd(py), qz = _mm256_set1_pd(pz);
  const __m256d inf = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  __m256d best = inf;
  __m256d best_idx = _mm256_set1_pd(-1.0);
  __m256d idx = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
  const __m256d step = _mm256_set1_pd(static_cast<double>(kLanes));
  const std::size_t n = padded(p.count);
  for (std::size_t i = 0; i < n; i += kLanes, idx = _mm256_add_pd(idx, step)) {
    const __m256d keep = lane_mask(eligible, i);
    if (_mm256_movemask_pd(keep) == 0) continue;
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(&p.x[i]), qx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(&p.y[i]), qy);
    const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(&p.z[i]), qz);
    __m256d d2 = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)), _mm256_mul_pd(dz, dz));
    d2 = _mm256_blendv_pd(inf, d2, keep);
    const __m256d better = _mm256_cmp_pd(d2, best, _CMP_LT_OQ);
    best = _mm256_blendv_pd(best, d2, better);
    best_idx = _mm256_blendv_pd(best_idx, idx, better);
  }
  alignas(32) double v[4], k[4];
  _mm256_store_pd(v, best);
  _mm256_store_pd(k, best_idx);
  double out = std::numeric_limits<double>::infinity();
  int out_idx = -1;
  for (int l = 0; l < kLanes; ++l) {
    if (k[l] < 0.0) continue;
    const int li = static_cast<int>(k[l]);
    if (v[l] < out || (v[l] == out && li < out_idx)) {
      out = v[l];
      out_idx = li;
    }
  }
  if (argmin) *argmin = out_idx;
  return out;
}

}  // namespace

const KernelTable* avx2_kernels_impl() {
  static const KernelTable table{"avx2", &winding_avx2, &min_dist2_avx2};
  return &table;
}

}  // namespace handfit::simd
