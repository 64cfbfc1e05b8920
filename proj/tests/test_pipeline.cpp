#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "stitch/pipeline.hpp"
#include "test_util.hpp"

using namespace stitch;
namespace fs = std::filesystem;
using stitch_test::slurp;

namespace {

RunConfig base_config(const std::string& fixture, const std::string& outdir) {
  RunConfig cfg;
  cfg.graph_path = std::string(FIXTURE_DIR) + "/" + fixture;
  cfg.output_dir = outdir;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("pipeline writes the full artifact set for layer-norm") {
  TempDir dir("stitch_test_pipeline_ln");
  RunConfig cfg = base_config("layernorm.graph", dir.path.string());
  cfg.emit_dot = true;
  cfg.run_sim = true;
  cfg.run_baseline = true;
  cfg.seed = 3;
  REQUIRE(run_pipeline(cfg) == 0);

  CHECK(fs::exists(dir.path / "plan.json"));
  CHECK(fs::exists(dir.path / "report.txt"));
  CHECK(fs::exists(dir.path / "graph.dot"));
  CHECK(fs::exists(dir.path / "sim_report.txt"));
  CHECK(fs::is_directory(dir.path / "kernels"));
  CHECK(!fs::is_empty(dir.path / "kernels"));

  std::string report = slurp((dir.path / "report.txt").string());
  CHECK(report.find("stitched 1") != std::string::npos);
  CHECK(report.find("baseline 4") != std::string::npos);
  std::string sim = slurp((dir.path / "sim_report.txt").string());
  CHECK(sim.find("pass") != std::string::npos);
  std::string dot = slurp((dir.path / "graph.dot").string());
  CHECK(dot.find("digraph") != std::string::npos);
  CHECK(dot.find("cluster") != std::string::npos);
}

TEST_CASE("an unreadable or empty graph fails with a nonzero status") {
  TempDir dir("stitch_test_pipeline_bad");
  fs::create_directories(dir.path);
  fs::path empty_graph = dir.path / "empty.graph";
  std::ofstream(empty_graph).close();

  RunConfig cfg;
  cfg.graph_path = empty_graph.string();
  cfg.output_dir = (dir.path / "out").string();
  CHECK(run_pipeline(cfg) != 0);

  cfg.graph_path = (dir.path / "missing.graph").string();
  CHECK(run_pipeline(cfg) != 0);
}

TEST_CASE("identical runs produce byte-identical plan dumps") {
  TempDir a("stitch_test_pipeline_det_a");
  TempDir b("stitch_test_pipeline_det_b");
  for (const char* f : {"softmax.graph", "variance.graph"}) {
    CAPTURE(f);
    RunConfig c1 = base_config(f, a.path.string());
    RunConfig c2 = base_config(f, b.path.string());
    c1.run_baseline = c2.run_baseline = true;
    c1.seed = c2.seed = 9;
    REQUIRE(run_pipeline(c1) == 0);
    REQUIRE(run_pipeline(c2) == 0);
    CHECK(slurp((a.path / "plan.json").string()) == slurp((b.path / "plan.json").string()));
    CHECK(slurp((a.path / "report.txt").string()) == slurp((b.path / "report.txt").string()));
  }
}

TEST_CASE("sim comparison passes on every shipped fixture") {
  const char* fixtures[] = {"attention_softmax.graph", "remote.graph", "bias_reduce.graph"};
  for (const char* f : fixtures) {
    CAPTURE(f);
    TempDir dir(std::string("stitch_test_pipeline_sim_") + f);
    RunConfig cfg = base_config(f, dir.path.string());
    cfg.run_sim = true;
    cfg.seed = 1;
    CHECK(run_pipeline(cfg) == 0);
    std::string sim = slurp((dir.path / "sim_report.txt").string());
    CHECK(sim.find("pass") != std::string::npos);
  }
}

TEST_CASE("kernel files parse as stitched programs") {
  TempDir dir("stitch_test_pipeline_kernels");
  RunConfig cfg = base_config("softmax.graph", dir.path.string());
  REQUIRE(run_pipeline(cfg) == 0);
  int parsed = 0;
  for (const auto& e : fs::directory_iterator(dir.path / "kernels")) {
    CHECK_NOTHROW(parse_program_text(slurp(e.path().string())));
    ++parsed;
  }
  CHECK(parsed >= 1);
}
