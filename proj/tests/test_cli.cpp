#include <fstream>
#include <sstream>

#include "doctest.h"
#include "factormap/cli.hpp"
#include "factormap/error.hpp"
#include "support.hpp"

using namespace factormap;
namespace fs = std::filesystem;

namespace {

struct Cli {
  std::ostringstream out, err;
  int code = -1;
  Cli(std::vector<std::string> args) { code = cli_main(args, out, err); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Tiny schedule and scene as --set overrides.
std::vector<std::string> tiny_run(const fs::path& out, const std::string& run_id) {
  return {"run", "--out", out.string(), "--seed", "3", "--set",
          "field.res=8", "field.density_channels=2", "field.appearance_channels=2", "field.hidden=8",
          "field.density_bias=-2", "schedule.init_frames=3", "schedule.sample_counts=[8,8,8,8]",
          "schedule.init_iters=8", "schedule.init_rays_per_iter=32", "schedule.active_window=4",
          "schedule.local_frames=2", "schedule.frames_per_update=2", "schedule.iters_per_update=2",
          "schedule.rays_per_iter=32", "schedule.update_coarse=8", "schedule.update_fine=8",
          "schedule.keyframe_stride=2", "synthetic.frame_count=7",
          R"(synthetic.intrinsics={"fx":10.5,"fy":10.5,"cx":6,"cy":6,"width":12,"height":12})",
          "output.view_stride=2", "output.pixel_stride=3", "output.eval_coarse=8", "output.eval_fine=8",
          "output.run_id=" + run_id};
}

}  // namespace

TEST_CASE("usage errors exit with the config code") {
  CHECK(Cli({}).code == kExitConfig);
  CHECK(Cli({"frobnicate"}).code == kExitConfig);
  CHECK(Cli({"run", "--set", "field.nope=1"}).code == kExitConfig);
  CHECK(Cli({"--help"}).code == kExitOk);
  Cli bad({"run", "--set", "field.res=1"});
  CHECK(bad.code == kExitConfig);
  CHECK(bad.err.str().find("error:") != std::string::npos);
}

TEST_CASE("exception kinds map to exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(InvalidInput("x")) == kExitConfig);
  CHECK(exit_code_for(DataError("x")) == kExitData);
  CHECK(exit_code_for(DivergenceError("x")) == kExitDivergence);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitFailure);
}

TEST_CASE("defaults output parses back") {
  Cli c({"defaults"});
  REQUIRE(c.code == 0);
  CHECK_NOTHROW(config_from_json(c.out.str()));
}

TEST_CASE("synthetic run writes the full output set") {
  fmtest::TempDir tmp("clirun");
  std::vector<std::string> args = tiny_run(tmp.path, "a");
  args.push_back("--snapshot-every");
  args.push_back("4");
  Cli c(args);
  INFO(c.err.str());
  REQUIRE(c.code == 0);
  const fs::path run = tmp.path / "a";
  for (const char* f : {"config.json", "metrics.csv", "timing.csv", "uncertainty.csv", "map.ckpt", "eval.csv"})
    CHECK(fs::exists(run / f));
  CHECK(fs::exists(run / "snap_000005" / "cloud.ply"));
  CHECK(fs::exists(run / "snap_000007" / "metrics.csv"));
  std::istringstream metrics(slurp(run / "metrics.csv"));
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "step,frame,L_c,L_w,total,d_M,PSNR");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  CHECK(rows == 3);  // init + 2 updates
  // The echoed config reproduces the run.
  const RunConfig echoed = config_from_json(slurp(run / "config.json"));
  CHECK(echoed.seed == 3);
  CHECK(echoed.mapping.shape.res == 8);

  SUBCASE("report and render from the checkpoint") {
    Cli r({"report", "--checkpoint", (run / "map.ckpt").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.str().find("param_count=") != std::string::npos);
    CHECK(r.out.str().find("0.01 M") != std::string::npos);
    Cli v({"render", "--checkpoint", (run / "map.ckpt").string(), "--pose", "0 0 1.2 0 0 0 1", "--out",
           (tmp.path / "v.png").string(), "--depth-out", (tmp.path / "v_d.png").string()});
    REQUIRE(v.code == 0);
    CHECK(read_png(tmp.path / "v.png").width() == 12);
    CHECK(fs::exists(tmp.path / "v_d.png"));
    CHECK(Cli({"render", "--checkpoint", (run / "map.ckpt").string(), "--pose", "0 0 1", "--out", "x.png"}).code ==
          kExitConfig);
    CHECK(Cli({"report", "--checkpoint", (tmp.path / "none").string()}).code == kExitData);
  }
  SUBCASE("eval between clouds") {
    const fs::path ply = run / "snap_000007" / "cloud.ply";
    Cli e({"eval", ply.string(), ply.string(), "--threshold", "0.1"});
    REQUIRE(e.code == 0);
    CHECK(e.out.str().find("0.000000,0.000000,100.000000") != std::string::npos);
  }
}

TEST_CASE("synth output feeds a simple-layout run") {
  fmtest::TempDir tmp("clisynth");
  fs::path spec = tmp.path / "spec.json";
  SyntheticSceneSpec s = fmtest::small_scene(12, 5);
  std::ofstream(spec) << scene_spec_to_json(s);
  Cli g({"synth", "--spec", spec.string(), "--out", (tmp.path / "ds").string(), "--seed", "2"});
  REQUIRE(g.code == 0);
  CHECK(fs::exists(tmp.path / "ds" / "frames" / "000004.png"));
  CHECK(fs::exists(tmp.path / "ds" / "scene.json"));

  std::vector<std::string> args = tiny_run(tmp.path, "b");
  args.push_back("dataset.kind=simple");
  args.push_back("dataset.path=" + (tmp.path / "ds").string());
  args.push_back("dataset.max_frames=4");
  Cli c(args);
  INFO(c.err.str());
  REQUIRE(c.code == 0);
  CHECK_FALSE(fs::exists(tmp.path / "b" / "eval.csv"));
  CHECK(c.out.str().find("1 updates") != std::string::npos);

  std::vector<std::string> missing = tiny_run(tmp.path, "c");
  missing.push_back("dataset.kind=tum");
  missing.push_back("dataset.path=" + (tmp.path / "nothing").string());
  CHECK(Cli(missing).code == kExitData);
}
