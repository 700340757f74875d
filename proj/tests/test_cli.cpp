#include <doctest.h>

#include <fstream>

#include "ammsm/commands.hpp"

using namespace ammsm;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::filesystem::path write_config(const std::filesystem::path& dir, const nlohmann::json& j) {
  const auto path = dir / "config.json";
  std::ofstream os(path);
  os << j.dump(2);
  return path;
}

nlohmann::json tiny_config(const std::filesystem::path& work) {
  nlohmann::json j;
  j["dataset_dir"] = (work / "data").string();
  j["output_dir"] = (work / "out").string();
  j["seed"] = 7;
  j["model"] = {{"layers", {1, 1}}, {"channels", {8, 16}},      {"d_state", 4},
                {"heads", 2},       {"magnifier_base", 4},      {"spatial_base", 4},
                {"n_classes", 3}};
  j["train"] = {{"adaptive_epochs", 1}, {"finetune_epochs", 1}, {"lr", 0.001}, {"batch_size", 8}};
  j["search"] = {{"population", 4}, {"generations", 1}, {"elite", 1}, {"tournament", 2}, {"val_cap", 6}};
  j["synth"] = {{"n_subjects", 3}, {"n_classes", 3}, {"samples_per_subject_per_class", 2},
                {"resolution", 16}, {"seed", 5}};
  j["bench"] = {{"resolution", 32}, {"batches", 3}, {"warmup", 1}};
  return j;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config loading, defaulting, and --set overrides") {
  const auto work = fresh_dir("ammsm_cli_cfg");
  const auto path = write_config(work, tiny_config(work));
  auto cfg = load_runconfig(path, {});
  CHECK(cfg.model.preset == "desk");  // defaulted
  CHECK(cfg.train.adaptive_epochs == 1);
  CHECK(cfg.search.ga.population == 4);
  auto cfg2 = load_runconfig(path, {"train.adaptive_epochs=3", "model.sa_enabled=false", "seed=11"});
  CHECK(cfg2.train.adaptive_epochs == 3);
  CHECK(cfg2.model.sa_enabled == false);
  CHECK(cfg2.seed == 11);
  CHECK_THROWS_AS(load_runconfig(path, {"notanassignment"}), ConfigError);
  CHECK_THROWS_AS(load_runconfig(work / "missing.json", {}), ConfigError);
  // validation failures surface as config errors
  CHECK_THROWS_AS(load_runconfig(path, {"synth.resolution=50"}), ConfigError);
  CHECK_THROWS_AS(load_runconfig(path, {"precision=\"f16\""}), ConfigError);
}

TEST_CASE("synth command writes the dataset and is idempotent under one seed") {
  const auto work = fresh_dir("ammsm_cli_synth");
  const auto path = write_config(work, tiny_config(work));
  CHECK(run_command("synth", path.string(), {}) == 0);
  const Dataset ds = read_dataset(work / "data");
  CHECK(ds.samples.size() == 18);
  const std::string manifest = slurp(work / "data" / "manifest.json");
  const std::string one_flow = slurp(work / "data" / (ds.samples[0].id + "_flow.ammt"));
  CHECK(run_command("synth", path.string(), {}) == 0);
  CHECK(slurp(work / "data" / "manifest.json") == manifest);
  CHECK(slurp(work / "data" / (ds.samples[0].id + "_flow.ammt")) == one_flow);
}

TEST_CASE("invalid synth resolution exits with code 2 and names the constraint") {
  const auto work = fresh_dir("ammsm_cli_badres");
  const auto path = write_config(work, tiny_config(work));
  CHECK(run_command("synth", path.string(), {"synth.resolution=50"}) == 2);
}

TEST_CASE("run requires an existing dataset") {
  const auto work = fresh_dir("ammsm_cli_nodata");
  const auto path = write_config(work, tiny_config(work));
  CHECK(run_command("run", path.string(), {}) == 2);
}

TEST_CASE("run produces a byte-identical report under a fixed seed") {
  const auto work = fresh_dir("ammsm_cli_run");
  const auto path = write_config(work, tiny_config(work));
  REQUIRE(run_command("synth", path.string(), {}) == 0);
  REQUIRE(run_command("run", path.string(), {}) == 0);
  const std::string report1 = slurp(work / "out" / "report.json");
  CHECK(report1.find("pooled") != std::string::npos);
  REQUIRE(run_command("run", path.string(), {std::string("output_dir=") + (work / "out2").string()}) == 0);
  std::string report2 = slurp(work / "out2" / "report.json");
  // normalize the differing output_dir config echo before comparing
  const std::string from = (work / "out2").string();
  const std::string to = (work / "out").string();
  for (std::size_t pos = report2.find(from); pos != std::string::npos; pos = report2.find(from, pos))
    report2.replace(pos, from.size(), to);
  CHECK(report1 == report2);
  // artifacts exist per fold
  CHECK(std::filesystem::exists(work / "out" / "fold_0" / "best_config.json"));
  CHECK(std::filesystem::exists(work / "out" / "fold_0" / "model.ammt"));
  CHECK(std::filesystem::exists(work / "out" / "fold_0" / "model.ammt.index.json"));
  CHECK(std::filesystem::exists(work / "out" / "confusion.csv"));
}

TEST_CASE("64-bit precision mode runs end to end") {
  const auto work = fresh_dir("ammsm_cli_f64");
  const auto path = write_config(work, tiny_config(work));
  REQUIRE(run_command("synth", path.string(), {}) == 0);
  CHECK(run_command("run", path.string(), {"precision=\"f64\""}) == 0);
  const auto report = nlohmann::json::parse(slurp(work / "out" / "report.json"));
  CHECK(report["config"]["precision"] == "f64");
  CHECK(report["pooled"].contains("uf1"));
  CHECK(report["per_fold"][0].contains("uf1"));
}

TEST_CASE("eval consumes a run checkpoint") {
  const auto work = fresh_dir("ammsm_cli_eval");
  const auto path = write_config(work, tiny_config(work));
  REQUIRE(run_command("synth", path.string(), {}) == 0);
  REQUIRE(run_command("run", path.string(), {}) == 0);
  CHECK(run_command("eval", path.string(), {}, (work / "out" / "fold_0").string()) == 0);
  const auto report = nlohmann::json::parse(slurp(work / "out" / "eval.json"));
  CHECK(report.contains("uf1"));
  CHECK(report["uf1"].get<double>() >= 0.0);
  // missing checkpoint -> config/format failure
  CHECK(run_command("eval", path.string(), {}, (work / "nope").string()) == 2);
}

TEST_CASE("bench writes parseable reports with monotone ssd flops") {
  const auto work = fresh_dir("ammsm_cli_bench");
  auto j = tiny_config(work);
  j["bench"] = {{"resolution", 64}, {"batches", 3}, {"warmup", 1}, {"sparsity_levels", {0.3, 0.6}}};
  const auto path = write_config(work, j);
  CHECK(run_command("bench", path.string(), {}) == 0);
  const auto report = nlohmann::json::parse(slurp(work / "out" / "bench.json"));
  REQUIRE(report["rows"].size() == 3);  // dense + two levels
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& row : report["rows"]) {
    const double ssd = row["flops_ssd"].get<double>();
    CHECK(ssd <= prev);
    prev = ssd;
  }
  CHECK(std::filesystem::exists(work / "out" / "bench.csv"));
}

TEST_CASE("unknown command is a usage failure") {
  const auto work = fresh_dir("ammsm_cli_unknown");
  const auto path = write_config(work, tiny_config(work));
  CHECK(run_command("frobnicate", path.string(), {}) == 2);
}
