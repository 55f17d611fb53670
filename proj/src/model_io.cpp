#include <fstream>
#include <string>

#include "handfit/error.hpp"
#include "handfit/file_format.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

namespace {

constexpr const char* kModelFormat = "handfit-model";
constexpr int kModelMajor = 1;

const char* slot_name(int slot) {
  return slot == kBend ? "bend" : (slot == kSplay ? "splay" : "twist");
}

int slot_from_name(const std::string& s) {
  if (s == "bend") return kBend;
  if (s == "splay") return kSplay;
  if (s == "twist") return kTwist;
  throw Error(ErrorKind::SchemaViolation, "unknown Euler axis '" + s + "'");
}

template <typename Derived>
nlohmann::json flat(const Eigen::DenseBase<Derived>& m) {
  // Row-major flattening.
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

std::vector<double> read_doubles(const nlohmann::json& j, const char* key, std::size_t expected) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) {
    throw Error(ErrorKind::SchemaViolation, std::string("missing array '") + key + "'");
  }
  if (it->size() != expected) {
    throw Error(ErrorKind::SchemaViolation, std::string("array '") + key + "' has " +
                                                std::to_string(it->size()) + " entries, expected " +
                                                std::to_string(expected));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& x : *it) {
    if (!x.is_number()) throw Error(ErrorKind::SchemaViolation, std::string("non-numeric entry in '") + key + "'");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace

nlohmann::json model_to_json(const HandShapeModel& m) {
  const int V = m.num_vertices();
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = "1.0";
  j["num_vertices"] = V;
  j["num_joints"] = kRegressedJoints;
  j["template_vertices"] = flat(m.template_vertices.transpose());
  nlohmann::json faces = nlohmann::json::array();
  for (const auto& f : m.faces) {
    faces.push_back(f[0]);
    faces.push_back(f[1]);
    faces.push_back(f[2]);
  }
  j["num_faces"] = m.num_faces();
  j["faces"] = faces;
  j["parents"] = m.parents;
  j["rest_joints"] = flat(m.rest_joints.transpose());
  // V x 3 x 10, row-major.
  j["shape_bases"] = flat(m.shape_bases);
  j["joint_regressor"] = flat(m.joint_regressor);
  j["skinning_weights"] = flat(m.skinning_weights);
  nlohmann::json euler = nlohmann::json::array();
  for (const auto& e : m.euler) {
    nlohmann::json rec;
    rec["frame"] = flat(e.frame);
    rec["order"] = {slot_name(e.order[0]), slot_name(e.order[1]), slot_name(e.order[2])};
    euler.push_back(rec);
  }
  j["euler"] = euler;
  return j;
}

HandShapeModel model_from_json(const nlohmann::json& j) {
  check_header(j, kModelFormat, kModelMajor);
  if (!j.contains("num_vertices") || !j["num_vertices"].is_number_integer()) {
    throw Error(ErrorKind::SchemaViolation, "missing num_vertices");
  }
  const int V = j["num_vertices"].get<int>();
  if (V < 4) throw Error(ErrorKind::InvalidModel, "model needs at least 4 vertices");
  if (j.value("num_joints", -1) != kRegressedJoints) {
    throw Error(ErrorKind::SchemaViolation, "num_joints must be 21");
  }
  const std::size_t nv = static_cast<std::size_t>(V);

  HandShapeModel m;
  const auto tv = read_doubles(j, "template_vertices", 3 * nv);
  m.template_vertices.resize(3, V);
  for (int v = 0; v < V; ++v)
    for (int a = 0; a < 3; ++a) m.template_vertices(a, v) = tv[3 * v + a];

  const auto fit = j.find("faces");
  if (fit == j.end() || !fit->is_array() || fit->size() % 3 != 0) {
    throw Error(ErrorKind::SchemaViolation, "faces must be a flat array of index triples");
  }
  for (std::size_t i = 0; i < fit->size(); i += 3) {
    std::array<int, 3> f{};
    for (int k = 0; k < 3; ++k) {
      const auto& x = (*fit)[i + k];
      if (!x.is_number_integer()) throw Error(ErrorKind::SchemaViolation, "non-integer face index");
      f[k] = x.get<int>();
    }
    m.faces.push_back(f);
  }

  const auto parents = read_doubles(j, "parents", kSkeletonNodes);
  for (int b = 0; b < kSkeletonNodes; ++b) m.parents[b] = static_cast<int>(parents[b]);

  const auto rj = read_doubles(j, "rest_joints", 3 * kSkeletonNodes);
  for (int b = 0; b < kSkeletonNodes; ++b)
    for (int a = 0; a < 3; ++a) m.rest_joints(a, b) = rj[3 * b + a];

  const auto sb = read_doubles(j, "shape_bases", 3 * nv * kShapeCoeffs);
  m.shape_bases.resize(3 * V, kShapeCoeffs);
  for (int r = 0; r < 3 * V; ++r)
    for (int k = 0; k < kShapeCoeffs; ++k) m.shape_bases(r, k) = sb[r * kShapeCoeffs + k];

  const auto jr = read_doubles(j, "joint_regressor", kRegressedJoints * nv);
  m.joint_regressor.resize(kRegressedJoints, V);
  for (int r = 0; r < kRegressedJoints; ++r)
    for (int v = 0; v < V; ++v) m.joint_regressor(r, v) = jr[r * nv + v];

  const auto sw = read_doubles(j, "skinning_weights", nv * kSkeletonNodes);
  m.skinning_weights.resize(V, kSkeletonNodes);
  for (int v = 0; v < V; ++v)
    for (int b = 0; b < kSkeletonNodes; ++b) m.skinning_weights(v, b) = sw[v * kSkeletonNodes + b];

  const auto eit = j.find("euler");
  if (eit == j.end() || !eit->is_array() || eit->size() != kArticulatedJoints) {
    throw Error(ErrorKind::SchemaViolation, "euler must list 15 joint conventions");
  }
  for (int k = 0; k < kArticulatedJoints; ++k) {
    const auto& rec = (*eit)[k];
    const auto frame = read_doubles(rec, "frame", 9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m.euler[k].frame(r, c) = frame[3 * r + c];
    const auto oit = rec.find("order");
    if (oit == rec.end() || !oit->is_array() || oit->size() != 3) {
      throw Error(ErrorKind::SchemaViolation, "euler order must have 3 axes");
    }
    for (int i = 0; i < 3; ++i) {
      if (!(*oit)[i].is_string()) throw Error(ErrorKind::SchemaViolation, "euler axis must be a name");
      m.euler[k].order[i] = slot_from_name((*oit)[i].get<std::string>());
    }
  }

  validate_model(m);
  return m;
}

HandShapeModel load_model(const std::filesystem::path& path) {
  return model_from_json(read_json_file(path));
}

void save_model(const HandShapeModel& model, const std::filesystem::path& path) {
  write_json_file(model_to_json(model), path);
}

}  // namespace handfit
