// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line and
// the process exits non-zero if any selected criterion fails.
//
//   handfit_acceptance --criterion 3 --out build/acceptance
//   handfit_acceptance --criterion all --out /tmp/acc

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handfit/dataset.hpp"
#include "handfit/error.hpp"
#include "handfit/fitter.hpp"
#include "handfit/metrics.hpp"
#include "handfit/penetration.hpp"
#include "handfit/pose_prior.hpp"
#include "oracles.hpp"

using namespace handfit;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const HandShapeModel& model() {
  static const HandShapeModel m = synth_test_model(0);
  return m;
}

const JointLimitTable& limits() {
  static const JointLimitTable t = default_limits();
  return t;
}

std::vector<SampleRecord> dataset(int n, const std::string& noise) {
  SynthOptions opt;
  opt.n = n;
  opt.seed = 0;
  opt.noise = NoiseProfile::parse(noise);
  return synthesize(model(), limits(), opt);
}

// Fits every record single-threaded, writes the report file and evaluates it.
EvalDetail fit_and_eval(const std::vector<SampleRecord>& recs, const FitConfig& cfg, const fs::path& out,
                        bool clean_joints_only = false) {
  const Fitter fitter(model(), limits(), cfg);
  std::vector<LandmarkObservation> obs;
  for (const auto& r : recs) obs.push_back(r.obs);
  const auto items = fit_batch(fitter, obs, 1);
  write_reports(out, items, cfg, false, false);
  EvalOptions eo;
  eo.d_tol = cfg.d_tol;
  eo.clean_joints_only = clean_joints_only;
  return evaluate_reports(model(), limits(), recs, read_reports(out), eo);
}

// ---------------------------------------------------------------- 1

bool clear_of_kinks(const Fitter& f, const PoseState& s, double margin) {
  const RefinedLimits r = refine_limits<double>(limits(), s.theta.data());
  for (int i = 0; i < kPoseParams; ++i) {
    const double a = s.theta.data()[i];
    if (std::abs(a) < margin || std::abs(a - r.lo[i]) < margin || std::abs(a - r.hi[i]) < margin) return false;
  }
  for (int j = 0; j < kArticulatedJoints; ++j)
    for (int a = 0; a < 3; ++a) {
      const AngleRange& ab = limits().range[j][a];
      if (std::abs(s.theta(j, a) - ab.min) < margin || std::abs(s.theta(j, a) - ab.max) < margin) return false;
    }
  // The penetration hinge switches where a contact's depth equals d_tol.
  const HandMesh mesh = f.mesh_of(s);
  for (const Contact& c : f.contacts(s)) {
    const double d = (mesh.vertices.col(c.vertex) - mesh.vertices.col(c.partner)).norm();
    if (std::abs(d - f.config().d_tol) < 1e-5) return false;
  }
  return true;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const Fitter fitter(model(), limits(), FitConfig{});
  const auto recs = dataset(25, "gaussian:2");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0), ls(std::log(0.6), std::log(40.0));
  std::uniform_int_distribution<int> axis(0, kPoseParams - 1);
  double worst = 0.0;
  int states = 0, near_hinge = 0, in_contact = 0, attempts = 0;
  while (states < 100 && attempts < 5000) {
    ++attempts;
    PoseState s = recs[attempts % recs.size()].truth->state;
    for (int i = 0; i < kPoseParams; ++i) s.theta.data()[i] += 0.25 * g(rng);
    s.beta += 0.3 * ShapeCoeffs::NullaryExpr([&] { return g(rng); });
    s.camera.log_scale += 0.05 * g(rng);
    for (double& v : s.log_sigma) v = ls(rng);
    // Every other state puts one angle just inside or just outside a bound.
    const bool hinge = states % 2 == 1;
    if (hinge) {
      const int i = axis(rng);
      const RefinedLimits r = refine_limits<double>(limits(), s.theta.data());
      const double edge = u(rng) < 0.5 ? r.lo[i] : r.hi[i];
      s.theta.data()[i] = edge + (u(rng) < 0.5 ? -1.0 : 1.0) * (2e-4 + 3e-3 * u(rng));
    }
    if (!clear_of_kinks(fitter, s, 1e-4)) continue;
    const Stage st = states % 4 < 2 ? Stage::Mse : Stage::Nll;
    const auto& obs = recs[attempts % recs.size()].obs;
    double err = 0.0;
    try {
      err = fitter.gradient_self_check(s, obs, st);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::BehindCamera) continue;
      throw;
    }
    worst = std::max(worst, err);
    near_hinge += hinge;
    in_contact += !fitter.contacts(s).empty();
    ++states;
  }
  const double secs = seconds_since(t0);
  return {states == 100 && worst <= 1e-3 && secs <= 30.0,
          fmt("max_rel_err=%.2e states=%d near_hinge=%d with_contacts=%d time=%.1fs (limits 1e-3, 30s)", worst,
              states, near_hinge, in_contact, secs)};
}

// ---------------------------------------------------------------- 2

Outcome winding_vs_parity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto recs = dataset(20, "clean");
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, model().num_vertices() - 1);
  const std::vector<std::array<int, 3>>& F = model().faces;
  const Eigen::Vector3d dirs[3] = {Eigen::Vector3d(0.31, 0.77, 0.56).normalized(),
                                   Eigen::Vector3d(-0.62, 0.18, 0.76).normalized(),
                                   Eigen::Vector3d(0.44, -0.81, 0.39).normalized()};
  int agree = 0, total = 0;
  for (const auto& r : recs) {
    const HandMesh mesh = forward_kinematics(model(), r.truth->state.theta, r.truth->state.beta);
    const Eigen::Vector3d lo = mesh.vertices.rowwise().minCoeff(), hi = mesh.vertices.rowwise().maxCoeff();
    Eigen::Matrix3Xd q(3, 500);
    for (int i = 0; i < 500; ++i) {
      if (i % 2 == 0) {
        // Close to the surface, where the two tests are most likely to differ.
        q.col(i) = mesh.vertices.col(pick(rng)) + 0.003 * Eigen::Vector3d(g(rng), g(rng), g(rng));
      } else {
        for (int a = 0; a < 3; ++a) q(a, i) = lo[a] + (hi[a] - lo[a]) * u(rng);
      }
    }
    const Eigen::VectorXd w = winding_numbers(mesh.vertices, F, q);
    for (int i = 0; i < 500; ++i) {
      int votes = 0;
      for (const auto& d : dirs) votes += oracle::ray_crossings(mesh.vertices, F, q.col(i), d) % 2;
      agree += (w[i] > 0.5) == (votes >= 2);
      ++total;
    }
  }
  const double secs = seconds_since(t0);
  const double frac = static_cast<double>(agree) / total;
  return {frac >= 0.999 && secs <= 60.0,
          fmt("agreement=%.4f%% (%d/%d) meshes=20 time=%.1fs (limits 99.9%%, 60s)", 100.0 * frac, agree, total, secs)};
}

// ---------------------------------------------------------------- 3

Outcome clean_round_trip(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto recs = dataset(100, "clean");
  const EvalDetail ev = fit_and_eval(recs, FitConfig{}, out / "clean_reports.jsonl");
  const double secs = seconds_since(t0);
  const EvalSummary& s = ev.summary;
  const bool pass = s.n_samples == 100 && s.e_j <= 5.0 && s.e_v <= 6.0 && s.pr == 0.0 && secs <= 300.0;
  return {pass, fmt("E_J=%.3fmm E_V=%.3fmm PR=%.1f%% AUC_J=%.3f n=%d time=%.1fs single-core (limits 5mm, 6mm, "
                    "0%%, 300s; the 8-job budget is not checked on this machine)",
                    s.e_j, s.e_v, s.pr, s.auc_j, s.n_samples, secs)};
}

// ---------------------------------------------------------------- 4

Outcome ablation(const fs::path& out) {
  const auto recs = dataset(100, "gaussian:2");
  const char* names[4] = {"none", "bio", "anat", "phys"};
  std::array<EvalSummary, 4> rows;
  for (int row = 0; row < 4; ++row) {
    FitConfig c;
    if (row < 3) c.lambda2 = 0.0;
    if (row < 2) c.anatomy = false;
    if (row < 1) c.lambda1 = 0.0;
    rows[row] = fit_and_eval(recs, c, out / (std::string("ablation_") + names[row] + ".jsonl")).summary;
  }
  const auto corrupt = dataset(100, "corrupt:2:40");
  FitConfig mse;
  mse.nll = false;
  const double e_mse = fit_and_eval(corrupt, mse, out / "corrupt_mse.jsonl", true).summary.e_j;
  const double e_nll = fit_and_eval(corrupt, FitConfig{}, out / "corrupt_nll.jsonl", true).summary.e_j;

  const bool monotone = rows[1].e_j <= rows[0].e_j && rows[2].e_j <= rows[1].e_j && rows[3].e_j <= rows[2].e_j;
  const bool pr_cut = rows[3].pr <= 0.5 * rows[2].pr && (rows[2].pr > 0.0 || rows[3].pr == 0.0);
  const double gain = 1.0 - e_nll / e_mse;
  std::ostringstream os;
  os << fmt("E_J none/bio/anat/phys=%.3f/%.3f/%.3f/%.3f mm", rows[0].e_j, rows[1].e_j, rows[2].e_j, rows[3].e_j)
     << (monotone ? " monotone" : " NOT monotone")
     << fmt("; PR anat=%.1f%% phys=%.1f%%", rows[2].pr, rows[3].pr) << (pr_cut ? " (>=50%% cut)" : " (cut <50%%)")
     << fmt("; corrupt clean-joint E_J mse=%.3f nll=%.3f gain=%.1f%%", e_mse, e_nll, 100.0 * gain)
     << (gain >= 0.05 ? "" : " (<5%)");
  std::string d = os.str();
  for (std::size_t p; (p = d.find("%%")) != std::string::npos;) d.erase(p, 1);
  return {monotone && pr_cut && gain >= 0.05, d};
}

// ---------------------------------------------------------------- 5

Outcome refine_examples() {
  int checks = 0, bad = 0;
  auto expect = [&](double got, double want) {
    ++checks;
    if (std::abs(got - want) > 1e-12) ++bad;
  };
  for (int finger = 0; finger < 4; ++finger) {
    const int mcp = 3 * finger;
    const AngleRange bend = limits().range[mcp][kBend];
    const AngleRange splay = limits().range[mcp][kSplay];
    for (double frac : {0.0, 0.5, 1.0}) {
      PoseAngles th = PoseAngles::Zero();
      th(mcp, kBend) = frac * bend.max;
      const RefinedLimits r = refine_limits<double>(limits(), th.data());
      expect(r.hi[3 * mcp + kSplay], (1.0 - frac) * splay.max);
      expect(r.lo[3 * mcp + kSplay], splay.min);
    }
  }
  // Flexed DIP clamps a negative PIP lower bound to zero.
  JointLimitTable t = limits();
  t.range[4][kBend].min = -0.05;
  PoseAngles th = PoseAngles::Zero();
  th(5, kBend) = 0.1;
  expect(refine_limits<double>(t, th.data()).lo[3 * 4 + kBend], 0.0);
  th(5, kBend) = -0.1;
  expect(refine_limits<double>(t, th.data()).lo[3 * 4 + kBend], -0.05);
  // The worked value: 0.30 rad halves to 0.15 at half flexion.
  t = limits();
  t.range[0][kSplay].max = 0.30;
  th.setZero();
  th(0, kBend) = 0.5 * t.range[0][kBend].max;
  expect(refine_limits<double>(t, th.data()).hi[kSplay], 0.15);
  return {bad == 0, fmt("%d/%d refinement values exact (splay factors 1, 0.5, 0 on four MCPs; PIP reset)",
                        checks - bad, checks)};
}

// ---------------------------------------------------------------- 6

Outcome metric_fixtures() {
  std::vector<std::string> failed;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.08, 0.08);
  Eigen::Matrix3Xd gt(3, 21);
  for (int i = 0; i < 21; ++i) gt.col(i) << u(rng), u(rng), u(rng);
  const Eigen::Matrix3d Q = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const Eigen::Matrix3Xd pred = (2.0 * Q * gt).colwise() + Eigen::Vector3d(0.1, -0.2, 0.3);
  const double res = (procrustes_align(pred, gt) - gt).norm();
  if (res > 1e-12) failed.push_back("procrustes");
  const double a1 = pck_auc(std::vector<double>(21, 0.0));
  const double a0 = pck_auc(std::vector<double>(21, 60.0));
  const double ah = pck_auc(std::vector<double>(21, 25.0));
  if (std::abs(a1 - 1.0) > 1e-12) failed.push_back("auc=1");
  if (a0 != 0.0) failed.push_back("auc=0");
  if (std::abs(ah - 0.5) > 0.01) failed.push_back("auc=0.5");

  const PenetrationDetector det(model());
  PoseAngles pierce = PoseAngles::Zero();
  pierce(0, kBend) = 150.0 * kDeg;
  pierce(1, kBend) = 90.0 * kDeg;
  pierce(2, kBend) = 80.0 * kDeg;
  std::vector<double> depths{penetration_depth(forward_kinematics(model(), pierce, ShapeCoeffs::Zero()), det)};
  for (int i = 0; i < 3; ++i)
    depths.push_back(penetration_depth(forward_kinematics(model(), PoseAngles::Zero(), ShapeCoeffs::Zero()), det));
  const double pr = penetration_rate(depths, FitConfig{}.d_tol);
  if (std::abs(pr - 25.0) > 1e-12) failed.push_back("pr");
  std::string f;
  for (const auto& s : failed) f += " " + s;
  return {failed.empty(), fmt("procrustes_residual=%.1e auc=%.3f/%.3f/%.4f pr=%.1f%%%s", res, a1, a0, ah, pr,
                              failed.empty() ? "" : (" failed:" + f).c_str())};
}

// ---------------------------------------------------------------- 7

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kReportFiles[] = {"clean_reports.jsonl", "ablation_none.jsonl", "ablation_bio.jsonl",
                              "ablation_anat.jsonl", "ablation_phys.jsonl", "corrupt_mse.jsonl",
                              "corrupt_nll.jsonl"};

Outcome reproducible(const fs::path& out) {
  // Reuse the files of an earlier run of criteria 3 and 4 when present.
  bool have_reference = true;
  for (const char* f : kReportFiles) have_reference &= fs::exists(out / f);
  if (!have_reference) {
    clean_round_trip(out);
    ablation(out);
  }
  const fs::path again = out / "rerun";
  fs::create_directories(again);
  clean_round_trip(again);
  ablation(again);
  int same = 0;
  std::string differ;
  for (const char* f : kReportFiles) {
    const std::string a = slurp(out / f), b = slurp(again / f);
    if (!a.empty() && a == b) ++same;
    else differ += std::string(" ") + f;
  }
  const int n = static_cast<int>(std::size(kReportFiles));
  return {same == n, fmt("%d/%d report files byte-identical%s%s", same, n, have_reference ? "" : " (reference regenerated)",
                         differ.empty() ? "" : (", differ:" + differ).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handfit acceptance checks"};
  std::string which = "all";
  std::string out = "acceptance_out";
  app.add_option("--criterion", which, "1-7 or all")->capture_default_str();
  app.add_option("--out", out, "Directory for report files")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(out);
  fs::create_directories(dir);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> all = {
      {"1", gradient_suite},
      {"2", winding_vs_parity},
      {"3", [&] { return clean_round_trip(dir); }},
      {"4", [&] { return ablation(dir); }},
      {"5", refine_examples},
      {"6", metric_fixtures},
      {"7", [&] { return reproducible(dir); }},
  };
  bool ok = true, ran = false;
  for (const auto& [id, fn] : all) {
    if (which != "all" && which != id) continue;
    ran = true;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %s: %s %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    ok &= o.pass;
  }
  if (!ran) {
    std::fprintf(stderr, "unknown criterion '%s'\n", which.c_str());
    return 2;
  }
  return ok ? 0 : 1;
}
