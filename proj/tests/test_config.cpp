#include <fstream>

#include "doctest.h"
#include "factormap/config.hpp"
#include "factormap/error.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace factormap;
using nlohmann::json;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_json(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

json defaults() { return json::parse(config_to_json(RunConfig{})); }

}  // namespace

TEST_CASE("defaults survive a JSON round trip") {
  RunConfig c;
  c.seed = 42;
  c.mapping.shape.res = 32;
  c.mapping.schedule.sample_counts = {8, 16, 16, 16};
  c.dataset.kind = "simple";
  c.dataset.path = "/data/x";
  c.synthetic.boxes.push_back({{0, 0, 0}, {0.1, 0.1, 0.1}});
  c.output.run_id = "abc";
  c.mapping.render.mode = CompositeMode::kExpAlpha;
  const std::string text = config_to_json(c);
  const RunConfig back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.mapping.shape.res == 32);
  CHECK(back.synthetic.boxes.size() == 3);
  CHECK(back.mapping.render.mode == CompositeMode::kExpAlpha);
}

TEST_CASE("strict parsing names the offending key") {
  json j = defaults();
  j["field"].erase("res");
  CHECK(error_of(j.dump()) == "missing config key: field.res");
  j = defaults();
  j["schedule"]["bogus"] = 1;
  CHECK(error_of(j.dump()) == "unknown config key: schedule.bogus");
  j = defaults();
  j["extra"] = true;
  CHECK(error_of(j.dump()) == "unknown config key: extra");
  j = defaults();
  j["field"]["res"] = "big";
  CHECK(error_of(j.dump()) == "config key field.res has the wrong type");
  j = defaults();
  j["seed"] = -1;
  CHECK(error_of(j.dump()) == "config key seed has the wrong type");
  j = defaults();
  j["render"]["mode"] = "softmax";
  CHECK_FALSE(error_of(j.dump()).empty());
  CHECK_FALSE(error_of("{not json").empty());
}

TEST_CASE("validation rejects inconsistent values") {
  json j = defaults();
  j["schedule"]["sample_counts"] = {32, 64};
  CHECK_FALSE(error_of(j.dump()).empty());
  j = defaults();
  j["field"]["res"] = 1;
  CHECK_FALSE(error_of(j.dump()).empty());
  j = defaults();
  j["dataset"]["kind"] = "tum";
  CHECK(error_of(j.dump()).find("dataset.path") != std::string::npos);
  j = defaults();
  j["dataset"]["kind"] = "kitti";
  CHECK_FALSE(error_of(j.dump()).empty());
  j = defaults();
  j["loss"]["noise_variance"] = 0.0;
  CHECK_FALSE(error_of(j.dump()).empty());
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  const std::string base = config_to_json(RunConfig{});
  const RunConfig c = config_from_json(apply_overrides(
      base, {"field.res=16", "output.run_id=exp 1", "schedule.sample_counts=[4,4,4,4]", "output.snapshot_final=false",
             "optim.lr_grid=0.5"}));
  CHECK(c.mapping.shape.res == 16);
  CHECK(c.output.run_id == "exp 1");
  CHECK(c.mapping.schedule.sample_counts == std::vector<int>{4, 4, 4, 4});
  CHECK_FALSE(c.output.snapshot_final);
  CHECK(c.mapping.lr.grid == 0.5);
  CHECK_THROWS_AS(apply_overrides(base, {"field.nope=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"field.res"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"seed.x=1"}), ConfigError);
}

TEST_CASE("load_config reads files and applies overrides") {
  fmtest::TempDir tmp("cfg");
  RunConfig c;
  c.seed = 5;
  std::ofstream(tmp.path / "c.json") << config_to_json(c);
  const RunConfig a = load_config(tmp.path / "c.json", {"seed=6"});
  CHECK(a.seed == 6);
  CHECK(load_config({}).seed == 0);
  CHECK_THROWS_AS(load_config(tmp.path / "missing.json"), ConfigError);
}

TEST_CASE("scene spec json round trip") {
  SyntheticSceneSpec s;
  s.frame_count = 7;
  s.checker_period = 0.25;
  const std::string text = scene_spec_to_json(s);
  const SyntheticSceneSpec back = scene_spec_from_json(text);
  CHECK(back.frame_count == 7);
  CHECK(back.checker_period == 0.25);
  CHECK(scene_spec_to_json(back) == text);
  json j = json::parse(text);
  j["boxes"][0]["max"] = {9, 9, 9};
  CHECK_THROWS_AS(scene_spec_from_json(j.dump()), ConfigError);
}

TEST_CASE("snapshot options follow the output section") {
  RunConfig c;
  c.output.snapshot_every = 100;
  c.output.view_stride = 3;
  c.output.pixel_stride = 2;
  const SnapshotOptions s = c.snapshot_options();
  CHECK(s.every == 100);
  CHECK(s.view_stride == 3);
  CHECK(s.extract.pixel_stride == 2);
  CHECK(s.extract.opacity_floor == c.output.opacity_floor);
}
