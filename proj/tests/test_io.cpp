#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "handfit/dataset.hpp"
#include "handfit/error.hpp"
#include "handfit/file_format.hpp"
#include "handfit/fitter.hpp"
#include "handfit/pose_prior.hpp"

using namespace handfit;

namespace {

const HandShapeModel& model() {
  static const HandShapeModel m = synth_test_model(0);
  return m;
}

std::vector<SampleRecord> samples(int n, const std::string& noise, std::uint64_t seed = 0) {
  SynthOptions opt;
  opt.n = n;
  opt.seed = seed;
  opt.noise = NoiseProfile::parse(noise);
  return synthesize(model(), default_limits(), opt);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("handfit_io_" + name);
}

}  // namespace

TEST_CASE("noise profiles parse and print") {
  for (const char* text : {"clean", "gaussian:2", "corrupt:2:40", "occlude:18"}) {
    CHECK(NoiseProfile::parse(text).to_string() == text);
  }
  const NoiseProfile c = NoiseProfile::parse("corrupt:3:25.5");
  CHECK(c.kind == NoiseKind::Corrupt);
  CHECK(c.count == 3);
  CHECK(c.sigma_px == 25.5);
  for (const char* bad : {"", "gauss:2", "gaussian", "gaussian:-1", "corrupt:2", "occlude:22", "occlude:x"}) {
    try {
      NoiseProfile::parse(bad);
      FAIL("accepted " << bad);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Usage);
    }
  }
}

TEST_CASE("clean synthetic records are self-consistent") {
  const auto recs = samples(10, "clean");
  REQUIRE(recs.size() == 10);
  for (const auto& r : recs) {
    REQUIRE(r.truth.has_value());
    CHECK(truth_consistency(model(), r, {}) <= 1e-6);
    CHECK(r.obs.num_visible() == kRegressedJoints);
    CHECK(limit_violations(default_limits(), r.truth->state.theta).empty());
  }
  // Same seed, same data.
  CHECK(record_to_json(samples(10, "clean")[7]) == record_to_json(recs[7]));
  CHECK(record_to_json(samples(10, "clean", 1)[7]) != record_to_json(recs[7]));
}

TEST_CASE("gaussian noise has the requested spread") {
  double sq = 0.0, sum = 0.0;
  int n = 0;
  for (const auto& r : samples(60, "gaussian:2", 2)) {
    const auto clean = project(r.truth->joints, r.truth->state.camera, {});
    const auto d = r.obs.positions - clean;
    sum += d.sum();
    sq += d.squaredNorm();
    n += static_cast<int>(d.size());
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(sd - 2.0) <= 0.2);
  CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("corrupt and occlude profiles mark the affected joints") {
  for (const auto& r : samples(5, "corrupt:2:40", 3)) {
    REQUIRE(r.corrupted.size() == 2);
    const auto clean = project(r.truth->joints, r.truth->state.camera, {});
    for (int j = 0; j < kRegressedJoints; ++j) {
      const double d = (r.obs.positions.row(j) - clean.row(j)).norm();
      const bool marked = std::find(r.corrupted.begin(), r.corrupted.end(), j) != r.corrupted.end();
      if (!marked) CHECK(d < 1e-9);
    }
  }
  for (const auto& r : samples(5, "occlude:18", 3)) CHECK(r.obs.num_visible() == 3);
}

TEST_CASE("dataset files round trip") {
  const auto recs = samples(4, "corrupt:2:40", 4);
  const auto path = temp_file("dataset.jsonl");
  write_dataset(path, recs, {{"note", "test"}});
  const auto back = read_dataset(path);
  REQUIRE(back.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(record_to_json(back[i]) == record_to_json(recs[i]));

  // A future major version is refused.
  std::ifstream in(path);
  std::string header, rest, line;
  std::getline(in, header);
  while (std::getline(in, line)) rest += line + "\n";
  in.close();
  nlohmann::json h = nlohmann::json::parse(header);
  h["version"] = "2.0";
  std::ofstream(path) << h.dump() << "\n" << rest;
  try {
    read_dataset(path);
    FAIL("read a future version");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedVersion);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_dataset(path), Error);
}

TEST_CASE("reports round trip and evaluate against the truth") {
  const auto recs = samples(3, "clean", 5);
  std::vector<BatchItem> items;
  for (const auto& r : recs) {
    BatchItem it;
    it.source_id = r.obs.source_id;
    it.ok = true;
    it.report.source_id = r.obs.source_id;
    it.report.state = r.truth->state;
    items.push_back(it);
  }
  const auto path = temp_file("reports.jsonl");
  write_reports(path, items, FitConfig{}, false, false);
  const auto reports = read_reports(path);
  REQUIRE(reports.size() == 3);
  CHECK(reports[1].at("source_id") == recs[1].obs.source_id);
  const EvalDetail ev = evaluate_reports(model(), default_limits(), recs, reports, {});
  CHECK(ev.summary.n_samples == 3);
  CHECK(ev.summary.e_j < 1e-6);
  CHECK(ev.summary.e_v < 1e-6);
  CHECK(std::abs(ev.summary.auc_j - 1.0) <= 0.01);  // round-off misses the t = 0 grid point
  CHECK(ev.summary.pr == 0.0);
  CHECK(ev.missing.empty());

  const auto fewer = evaluate_reports(model(), default_limits(), recs, {reports[0], reports[2]}, {});
  CHECK(fewer.missing == std::vector<std::string>{recs[1].obs.source_id});
  std::filesystem::remove(path);
}

TEST_CASE("JSON files reject the wrong format tag") {
  const nlohmann::json j = {{"format", "something-else"}, {"version", "1.0"}};
  CHECK_THROWS_AS(check_header(j, kDatasetFormat, kFileMajorVersion), Error);
  CHECK_NOTHROW(check_header({{"format", kDatasetFormat}, {"version", "1.3"}}, kDatasetFormat, kFileMajorVersion));
}
