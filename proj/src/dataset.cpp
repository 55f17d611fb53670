#include "handfit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "handfit/error.hpp"
#include "handfit/file_format.hpp"
#include "handfit/penetration.hpp"

namespace handfit {

namespace {

constexpr const char* kVersion = "1.0";

nlohmann::json read_header_line(std::ifstream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::SchemaViolation, path.string() + ": empty file");
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, path.string() + ": header: " + e.what());
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
  return out;
}

template <typename F>
void for_each_record(std::ifstream& in, const std::filesystem::path& path, F&& f) {
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::SchemaViolation, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    f(j);
  }
}

Eigen::Matrix3Xd joints_of(const nlohmann::json& arr) {
  const auto v = arr.get<std::vector<double>>();
  if (v.size() != 3 * kRegressedJoints) throw Error(ErrorKind::SchemaViolation, "joints length");
  return Eigen::Map<const Eigen::Matrix<double, 3, kRegressedJoints>>(v.data());
}

Eigen::Matrix3Xd select_columns(const Eigen::Matrix3Xd& m, const std::vector<int>& cols) {
  Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

}  // namespace

nlohmann::json record_to_json(const SampleRecord& r) {
  nlohmann::json j;
  j["source_id"] = r.obs.source_id;
  std::vector<double> pos;
  pos.reserve(2 * kRegressedJoints);
  for (int i = 0; i < kRegressedJoints; ++i) {
    pos.push_back(r.obs.positions(i, 0));
    pos.push_back(r.obs.positions(i, 1));
  }
  j["landmarks"] = pos;
  std::vector<int> vis(r.obs.visible.begin(), r.obs.visible.end());
  j["visible"] = vis;
  if (!r.corrupted.empty()) j["corrupted"] = r.corrupted;
  if (r.truth) {
    nlohmann::json t = state_to_json(r.truth->state);
    t.erase("log_sigma");
    t["joints"] = std::vector<double>(r.truth->joints.data(), r.truth->joints.data() + 3 * kRegressedJoints);
    j["truth"] = t;
  }
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  try {
    SampleRecord r;
    r.obs.source_id = j.at("source_id").get<std::string>();
    const auto pos = j.at("landmarks").get<std::vector<double>>();
    const auto vis = j.at("visible").get<std::vector<int>>();
    if (pos.size() != 2 * kRegressedJoints || vis.size() != kRegressedJoints) {
      throw Error(ErrorKind::SchemaViolation, r.obs.source_id + ": landmark arrays must cover 21 joints");
    }
    for (int i = 0; i < kRegressedJoints; ++i) {
      r.obs.positions(i, 0) = pos[2 * i];
      r.obs.positions(i, 1) = pos[2 * i + 1];
      r.obs.visible[i] = vis[i] != 0;
      if (r.obs.visible[i] && !(std::isfinite(pos[2 * i]) && std::isfinite(pos[2 * i + 1]))) {
        throw Error(ErrorKind::SchemaViolation, r.obs.source_id + ": non-finite visible landmark");
      }
    }
    if (j.contains("corrupted")) r.corrupted = j.at("corrupted").get<std::vector<int>>();
    if (j.contains("truth")) {
      GroundTruth t;
      t.state = state_from_json(j.at("truth"));
      t.joints = joints_of(j.at("truth").at("joints"));
      r.truth = t;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, std::string("record: ") + e.what());
  }
}

void write_dataset(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                   const nlohmann::json& meta) {
  auto out = open_output(path);
  nlohmann::json header = meta;
  header["format"] = kDatasetFormat;
  header["version"] = kVersion;
  header["count"] = records.size();
  out << dump_compact(header) << '\n';
  for (const auto& r : records) out << dump_compact(record_to_json(r)) << '\n';
}

std::vector<SampleRecord> read_dataset(const std::filesystem::path& path) {
  auto in = open_input(path);
  check_header(read_header_line(in, path), kDatasetFormat, kFileMajorVersion);
  std::vector<SampleRecord> out;
  for_each_record(in, path, [&](const nlohmann::json& j) { out.push_back(record_from_json(j)); });
  return out;
}

void write_reports(const std::filesystem::path& path, const std::vector<BatchItem>& items, const FitConfig& config,
                   bool include_trace, bool include_timing) {
  auto out = open_output(path);
  nlohmann::json header{{"format", kReportsFormat}, {"version", kVersion}, {"config", config_to_json(config)}};
  header["count"] = items.size();
  out << dump_compact(header) << '\n';
  for (const auto& item : items) {
    nlohmann::json j;
    if (item.ok) {
      j = report_to_json(item.report, include_trace, include_timing);
    } else {
      j = {{"source_id", item.source_id}, {"status", "failed"}, {"error", item.error}, {"exit_code", item.exit_code}};
    }
    out << dump_compact(j) << '\n';
  }
}

std::vector<nlohmann::json> read_reports(const std::filesystem::path& path) {
  auto in = open_input(path);
  check_header(read_header_line(in, path), kReportsFormat, kFileMajorVersion);
  std::vector<nlohmann::json> out;
  for_each_record(in, path, [&](const nlohmann::json& j) {
    if (!j.contains("source_id")) throw Error(ErrorKind::SchemaViolation, path.string() + ": report without source_id");
    out.push_back(j);
  });
  return out;
}

EvalDetail evaluate_reports(const HandShapeModel& model, const JointLimitTable& limits,
                            const std::vector<SampleRecord>& records, const std::vector<nlohmann::json>& reports,
                            const EvalOptions& opt) {
  std::map<std::string, const nlohmann::json*> by_id;
  for (const auto& r : reports) by_id[r.at("source_id").get<std::string>()] = &r;

  const PenetrationDetector detector(model);
  EvalDetail out;
  std::vector<double> e_j, e_v, d_j, d_v, depths;
  double violations = 0.0;
  for (const SampleRecord& rec : records) {
    const auto it = by_id.find(rec.obs.source_id);
    if (it == by_id.end()) {
      out.missing.push_back(rec.obs.source_id);
      continue;
    }
    const nlohmann::json& rep = *it->second;
    if (!rec.truth || !rep.contains("state")) {
      ++out.skipped;
      continue;
    }
    const PoseState pred = state_from_json(rep.at("state"));
    const HandMesh pm = forward_kinematics(model, pred.theta, pred.beta);
    const HandMesh gm = forward_kinematics(model, rec.truth->state.theta, rec.truth->state.beta);

    std::vector<int> cols;
    for (int i = 0; i < kRegressedJoints; ++i) {
      if (opt.clean_joints_only && std::find(rec.corrupted.begin(), rec.corrupted.end(), i) != rec.corrupted.end()) {
        continue;
      }
      cols.push_back(i);
    }
    const auto dj = aligned_distances_mm(select_columns(pm.joints, cols), select_columns(gm.joints, cols));
    const auto dv = aligned_distances_mm(pm.vertices, gm.vertices);
    double sj = 0.0, sv = 0.0;
    for (double d : dj) sj += d;
    for (double d : dv) sv += d;
    e_j.push_back(sj / static_cast<double>(dj.size()));
    e_v.push_back(sv / static_cast<double>(dv.size()));
    d_j.insert(d_j.end(), dj.begin(), dj.end());
    d_v.insert(d_v.end(), dv.begin(), dv.end());
    depths.push_back(penetration_depth(pm, detector));
    // One degree of slack separates genuine violations from hinge residue.
    violations += static_cast<double>(limit_violations(limits, pred.theta, {}, std::numbers::pi / 180.0).size());
  }
  const int n = static_cast<int>(e_j.size());
  out.summary.n_samples = n;
  if (n > 0) {
    double a = 0.0, b = 0.0;
    for (int i = 0; i < n; ++i) {
      a += e_j[i];
      b += e_v[i];
    }
    out.summary.e_j = a / n;
    out.summary.e_v = b / n;
    out.summary.auc_j = pck_auc(d_j);
    out.summary.auc_v = pck_auc(d_v);
    out.summary.pr = penetration_rate(depths, opt.d_tol);
    out.limit_violations = violations / n;
  }
  return out;
}

}  // namespace handfit
