#pragma once

// Inner loops of the self-penetration test. Each kernel has a portable
// scalar reference and, on x86-64, an AVX2 variant selected at runtime.
// Set HANDFIT_SIMD=scalar in the environment to force the reference path.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace handfit::simd {

// Lane padding for all SoA buffers.
inline constexpr int kLanes = 4;

inline std::size_t padded(std::size_t n) { return (n + kLanes - 1) / kLanes * kLanes; }
inline std::size_t bit_words(std::size_t n) { return (padded(n) + 63) / 64; }

// Triangle corners in structure-of-arrays layout, padded with degenerate
// zero triangles whose exclusion bits the caller must set.
struct TriangleSoA {
  std::size_t count = 0;
  std::vector<double> ax, ay, az, bx, by, bz, cx, cy, cz;

  void resize(std::size_t n);
};

struct PointSoA {
  std::size_t count = 0;
  std::vector<double> x, y, z;

  void resize(std::size_t n);
};

// Generalized winding number of (px, py, pz): sum of signed solid angles of
// triangles whose bit in `excluded` is clear, divided by 4 pi. Returns NaN
// when the query coincides with a corner of an included triangle.
using WindingFn = double (*)(const TriangleSoA& tris, const std::uint64_t* excluded, double px,
                             double py, double pz);

// Smallest squared distance from (px, py, pz) to points whose bit in
// `eligible` is set; ties resolve to the lowest index. Writes -1 to *argmin
// and returns +inf when nothing is eligible.
using MinDistFn = double (*)(const PointSoA& pts, const std::uint64_t* eligible, double px,
                             double py, double pz, int* argmin);

struct KernelTable {
  const char* name;
  WindingFn winding;
  MinDistFn min_dist2;
};

const KernelTable& scalar_kernels();
// nullptr when not compiled in or unsupported by this CPU.
const KernelTable* avx2_kernels();
// Best available table, honoring HANDFIT_SIMD.
const KernelTable& active_kernels();

inline bool test_bit(const std::uint64_t* bits, std::size_t i) { return (bits[i >> 6] >> (i & 63)) & 1u; }
inline void set_bit(std::uint64_t* bits, std::size_t i) { bits[i >> 6] |= std::uint64_t{1} << (i & 63); }

}  // namespace handfit::simd
