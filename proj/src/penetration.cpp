#include "handfit/penetration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "handfit/simd/kernels.hpp"

namespace handfit {

namespace {

simd::TriangleSoA pack_triangles(const Eigen::Matrix3Xd& v, const FaceList& faces) {
  simd::TriangleSoA t;
  t.resize(faces.size());
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const auto& f = faces[i];
    t.ax[i] = v(0, f[0]); t.ay[i] = v(1, f[0]); t.az[i] = v(2, f[0]);
    t.bx[i] = v(0, f[1]); t.by[i] = v(1, f[1]); t.bz[i] = v(2, f[1]);
    t.cx[i] = v(0, f[2]); t.cy[i] = v(1, f[2]); t.cz[i] = v(2, f[2]);
  }
  return t;
}

simd::PointSoA pack_points(const Eigen::Matrix3Xd& v) {
  simd::PointSoA p;
  p.resize(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index i = 0; i < v.cols(); ++i) {
    p.x[i] = v(0, i);
    p.y[i] = v(1, i);
    p.z[i] = v(2, i);
  }
  return p;
}

// Padding lanes of a face bitset are always excluded.
std::vector<std::uint64_t> padding_excluded(std::size_t count) {
  std::vector<std::uint64_t> bits(simd::bit_words(count), 0);
  for (std::size_t i = count; i < simd::padded(count); ++i) simd::set_bit(bits.data(), i);
  return bits;
}

Eigen::Vector3d nudge_direction(const Eigen::Matrix3Xd& v) {
  const Eigen::Vector3d lo = v.rowwise().minCoeff();
  const Eigen::Vector3d hi = v.rowwise().maxCoeff();
  return 1e-9 * (hi - lo).norm() * Eigen::Vector3d(1.0, 2.0, 3.0).normalized();
}

}  // namespace

bool NeighborMask::contains(int v, int u) const {
  const auto& m = members[v];
  return std::binary_search(m.begin(), m.end(), u);
}

NeighborMask build_neighbor_mask(const Eigen::Matrix3Xd& rest, const FaceList& faces, double radius) {
  const int V = static_cast<int>(rest.cols());
  std::vector<std::vector<std::pair<int, double>>> adj(V);
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      // Each undirected edge appears once per orientation; keep a < b.
      if (a < b) {
        const double w = (rest.col(a) - rest.col(b)).norm();
        adj[a].emplace_back(b, w);
        adj[b].emplace_back(a, w);
      }
    }
  }
  NeighborMask mask;
  mask.radius = radius;
  mask.members.resize(V);
  std::vector<double> dist(V, std::numeric_limits<double>::infinity());
  std::vector<int> touched;
  using Item = std::pair<double, int>;
  for (int s = 0; s < V; ++s) {
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0.0;
    touched.assign(1, s);
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      mask.members[s].push_back(u);
      for (const auto& [w, len] : adj[u]) {
        const double nd = d + len;
        if (nd <= radius && nd < dist[w]) {
          if (std::isinf(dist[w])) touched.push_back(w);
          dist[w] = nd;
          pq.emplace(nd, w);
        }
      }
    }
    for (int u : touched) dist[u] = std::numeric_limits<double>::infinity();
    std::sort(mask.members[s].begin(), mask.members[s].end());
  }
  return mask;
}

NeighborMask build_neighbor_mask(const HandShapeModel& model, double radius) {
  return build_neighbor_mask(model.template_vertices, model.faces, radius);
}

Eigen::VectorXd winding_numbers(const Eigen::Matrix3Xd& vertices, const FaceList& faces,
                                const Eigen::Matrix3Xd& queries) {
  const auto& k = simd::active_kernels();
  const simd::TriangleSoA tris = pack_triangles(vertices, faces);
  const auto bits = padding_excluded(faces.size());
  const Eigen::Vector3d nudge = nudge_direction(vertices);
  Eigen::VectorXd out(queries.cols());
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    Eigen::Vector3d p = queries.col(q);
    double w = k.winding(tris, bits.data(), p.x(), p.y(), p.z());
    for (int attempt = 0; std::isnan(w) && attempt < 8; ++attempt) {
      p += nudge;
      w = k.winding(tris, bits.data(), p.x(), p.y(), p.z());
    }
    out[q] = w;
  }
  return out;
}

PenetrationDetector::PenetrationDetector(const HandShapeModel& model, const PenetrationOptions& opt)
    : opt_(opt), faces_(model.faces) {
  num_vertices_ = model.num_vertices();
  parents_ = model.parents;
  mask_ = build_neighbor_mask(model, opt.neighbor_radius);
  const std::size_t F = faces_.size();
  face_words_ = simd::bit_words(F);
  vertex_words_ = simd::bit_words(static_cast<std::size_t>(num_vertices_));

  std::vector<std::vector<int>> incident(num_vertices_);
  for (std::size_t i = 0; i < F; ++i) {
    for (int v : faces_[i]) incident[v].push_back(static_cast<int>(i));
  }
  const auto pad = padding_excluded(F);
  excluded_faces_.assign(face_words_ * num_vertices_, 0);
  eligible_vertices_.assign(vertex_words_ * num_vertices_, 0);
  for (int v = 0; v < num_vertices_; ++v) {
    std::uint64_t* ex = &excluded_faces_[face_words_ * v];
    std::copy(pad.begin(), pad.end(), ex);
    std::uint64_t* el = &eligible_vertices_[vertex_words_ * v];
    for (int u = 0; u < num_vertices_; ++u) simd::set_bit(el, u);
    for (int u : mask_.members[v]) {
      el[u >> 6] &= ~(std::uint64_t{1} << (u & 63));
      for (int f : incident[u]) simd::set_bit(ex, f);
    }
  }

  // Segments: dominant skinning bone, ties to the lower (proximal) index.
  segment_.resize(num_vertices_);
  for (int v = 0; v < num_vertices_; ++v) {
    Eigen::Index b = 0;
    model.skinning_weights.row(v).maxCoeff(&b);
    segment_[v] = static_cast<int>(b);
  }
  segment_members_.assign(kSkeletonNodes, {});
  for (int v = 0; v < num_vertices_; ++v) segment_members_[segment_[v]].push_back(v);
  segment_vertices_.assign(kSkeletonNodes, {});
  for (const auto& f : faces_) {
    for (int a : f) {
      for (int b : f) segment_vertices_[segment_[a]].push_back(b);
    }
  }
  touching_.assign(num_vertices_, 0u);
  for (int s = 0; s < kSkeletonNodes; ++s) {
    auto& sv = segment_vertices_[s];
    std::sort(sv.begin(), sv.end());
    sv.erase(std::unique(sv.begin(), sv.end()), sv.end());
    for (int v : sv) touching_[v] |= 1u << s;
  }

  rest_winding_.assign(num_vertices_, 0.0);
  if (opt_.rest_baseline) {
    const simd::TriangleSoA tris = pack_triangles(model.template_vertices, faces_);
    for (int v = 0; v < num_vertices_; ++v) {
      rest_winding_[v] = winding_impl(model.template_vertices, v, tris);
    }
  }
}

double PenetrationDetector::winding_impl(const Eigen::Matrix3Xd& posed, int v,
                                         const simd::TriangleSoA& tris) const {
  const auto& k = simd::active_kernels();
  const std::uint64_t* ex = &excluded_faces_[face_words_ * v];
  Eigen::Vector3d p = posed.col(v);
  double w = k.winding(tris, ex, p.x(), p.y(), p.z());
  if (std::isnan(w)) {
    const Eigen::Vector3d nudge = nudge_direction(posed);
    for (int attempt = 0; std::isnan(w) && attempt < 8; ++attempt) {
      p += nudge;
      w = k.winding(tris, ex, p.x(), p.y(), p.z());
    }
  }
  return w;
}

double PenetrationDetector::excluded_winding(const Eigen::Matrix3Xd& posed, int v) const {
  return winding_impl(posed, v, pack_triangles(posed, faces_));
}

std::vector<int> PenetrationDetector::broad_phase(const Eigen::Matrix3Xd& posed, const BoneFrames* bones) const {
  std::vector<int> out;
  if (!opt_.broad_phase) {
    out.resize(num_vertices_);
    for (int v = 0; v < num_vertices_; ++v) out[v] = v;
    return out;
  }
  // Two boxes per segment, in its bone frame when known, else in world
  // space: a tight one over its own vertices and a wide one over every
  // vertex of the faces it touches. A child's faces reach into its parent,
  // so a vertex is tested against the tight box of its parent segment and
  // the wide box of every other segment. A wide box is skipped when the
  // segment's faces already contain the vertex.
  std::array<Eigen::Matrix3d, kSkeletonNodes> rot;
  std::array<Eigen::Vector3d, kSkeletonNodes> org;
  std::array<std::array<Eigen::Vector3d, 2>, kSkeletonNodes> lo, hi;
  std::array<bool, kSkeletonNodes> present{};
  for (int s = 0; s < kSkeletonNodes; ++s) {
    if (bones) {
      rot[s] = bones->rotation[s].transpose();
      org[s] = bones->translation[s];
    } else {
      rot[s].setIdentity();
      org[s].setZero();
    }
    for (int wide = 0; wide < 2; ++wide) {
      lo[s][wide].setConstant(std::numeric_limits<double>::infinity());
      hi[s][wide].setConstant(-std::numeric_limits<double>::infinity());
      for (int u : wide ? segment_vertices_[s] : segment_members_[s]) {
        const Eigen::Vector3d q = rot[s] * (posed.col(u) - org[s]);
        lo[s][wide] = lo[s][wide].cwiseMin(q);
        hi[s][wide] = hi[s][wide].cwiseMax(q);
        present[s] = true;
      }
      lo[s][wide].array() -= opt_.broad_phase_margin;
      hi[s][wide].array() += opt_.broad_phase_margin;
    }
  }
  for (int v = 0; v < num_vertices_; ++v) {
    const Eigen::Vector3d p = posed.col(v);
    const int sv = segment_[v];
    for (int s = 0; s < kSkeletonNodes; ++s) {
      const int wide = parents_[sv] == s ? 0 : 1;
      if (!present[s] || s == sv || (wide && (touching_[v] >> s & 1u))) continue;
      const Eigen::Vector3d q = rot[s] * (p - org[s]);
      if ((q.array() >= lo[s][wide].array()).all() && (q.array() <= hi[s][wide].array()).all()) {
        out.push_back(v);
        break;
      }
    }
  }
  return out;
}

InteriorSet PenetrationDetector::interior(const Eigen::Matrix3Xd& posed, const BoneFrames* bones) const {
  InteriorSet out;
  const std::vector<int> cand = broad_phase(posed, bones);
  out.candidates = static_cast<int>(cand.size());
  if (cand.empty()) return out;
  const simd::TriangleSoA tris = pack_triangles(posed, faces_);
  const simd::PointSoA pts = pack_points(posed);
  const auto& k = simd::active_kernels();
  for (int v : cand) {
    const double w = winding_impl(posed, v, tris);
    if (!(w - rest_winding_[v] > opt_.winding_threshold)) continue;
    int partner = -1;
    const double d2 = k.min_dist2(pts, &eligible_vertices_[vertex_words_ * v], posed(0, v), posed(1, v),
                                  posed(2, v), &partner);
    if (partner < 0) continue;
    out.vertices.push_back(v);
    out.winding.push_back(w);
    out.depth.push_back(std::sqrt(d2));
    out.partner.push_back(partner);
  }
  return out;
}

InteriorSet interior_vertices(const HandMesh& mesh, const PenetrationDetector& detector) {
  return detector.interior(mesh.vertices, mesh.has_bones ? &mesh.bones : nullptr);
}

double non_penetration_loss(const InteriorSet& interior, double d_tol) {
  double acc = 0.0;
  for (double d : interior.depth) acc += std::max(d - d_tol, 0.0);
  return acc;
}

double penetration_depth(const InteriorSet& interior) {
  double m = 0.0;
  for (double d : interior.depth) m = std::max(m, d);
  return m;
}

double penetration_depth(const HandMesh& mesh, const PenetrationDetector& detector) {
  return penetration_depth(interior_vertices(mesh, detector));
}

}  // namespace handfit
