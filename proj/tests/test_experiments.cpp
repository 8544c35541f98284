#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cvdl/experiments.hpp"

using namespace cvdl;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const fs::path& dir) {
  ExperimentConfig c = default_experiment_config();
  c.data.n_train = 40;
  c.eval.n_test = 8;
  c.train.epochs = 1;
  c.train.batch_size = 8;
  c.output.dir = dir;
  set_master_seed(c, 5);
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CVDL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config JSON round trip") {
  ExperimentConfig c = default_experiment_config();
  c.train.weights = {1.5, 0.25, 0.0};
  c.poison.trigger.kind = AttackKind::wanet;
  c.train.precision = Precision::f32;
  c.output.tag = "x";
  const ExperimentConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.train.weights.patch == 1.5);
  CHECK(back.poison.trigger.kind == AttackKind::wanet);
  CHECK(back.poison.trigger.patch_row == c.poison.trigger.patch_row);
}

TEST_CASE("missing keys keep defaults; unknown keys and sections fail") {
  json j = json::parse(R"({"train": {"epochs": 3}})");
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.batch_size == default_experiment_config().train.batch_size);
  CHECK_THROWS(config_from_json(json::parse(R"({"train": {"epoch": 3}})")));
  CHECK_THROWS(config_from_json(json::parse(R"({"model": {}})")));
  CHECK_THROWS(config_from_json(json::parse(R"({"train": {"lr": -1}})")));
  CHECK_THROWS(config_from_json(json::parse(R"({"poison": {"target_response": "a red circle"}})")));
}

TEST_CASE("overrides") {
  json j = to_json(default_experiment_config());
  apply_override(j, "train.lambda2", "2");
  apply_override(j, "poison.attack", "Blended");
  apply_override(j, "train.defense", "false");
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.train.weights.cv_dis == 2.0);
  CHECK(c.poison.trigger.kind == AttackKind::blended);
  CHECK_FALSE(c.train.defense);
  CHECK_THROWS(apply_override(j, "lambda2", "1"));

  const auto keys = config_keys();
  for (const char* k : {"data.seed", "poison.ratio", "train.lambda1", "train.epochs", "eval.n_test", "output.dir"})
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
}

TEST_CASE("master seed and manifest") {
  ExperimentConfig c = default_experiment_config();
  set_master_seed(c, 77);
  CHECK(c.data.seed == 77);
  CHECK(c.poison.seed == 77);
  CHECK(c.train.seed == 77);
  CHECK(c.train.init_seed == 77);
  const std::string m = manifest_text(c);
  CHECK(m.find("train.seed=77") != std::string::npos);
  CHECK(m.find("train.lambda1=") != std::string::npos);
}

TEST_CASE("ablation masks") {
  const LossWeights d{0.5, 0.5, 0.1};
  const auto p = ablation_weights(AblationArm::patch_only, d);
  CHECK(p.patch == 0.5);
  CHECK(p.cv_dis == 0.0);
  CHECK(p.ent == 0.0);
  const auto pc = ablation_weights(AblationArm::patch_cvdis, d);
  CHECK(pc.cv_dis == 0.5);
  CHECK(pc.ent == 0.0);
  const auto n = ablation_weights(AblationArm::no_defense, d);
  CHECK(n.patch + n.cv_dis + n.ent == 0.0);
  CHECK(to_string(AblationArm::patch_cvdis) == "patch+cvdis");
}

TEST_CASE("matrix accounting, artifacts and byte-identical reruns") {
  const fs::path a = fs::temp_directory_path() / "cvdl_test_matrix_a";
  const fs::path b = fs::temp_directory_path() / "cvdl_test_matrix_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto rows = run_matrix(tiny(a), {AttackKind::badnets, AttackKind::dual_key});
  CHECK(rows.size() == 2 * (2 + 1));
  run_matrix(tiny(b), {AttackKind::badnets, AttackKind::dual_key});
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(fs::exists(a / "manifest.txt"));
  CHECK(fs::exists(a / "BadNets-defense" / "runlog.jsonl"));
  CHECK(fs::exists(a / "BadNets-defense" / "checkpoint.bin"));
  CHECK(rows[0].attack == "Clean");
  CHECK_FALSE(rows[0].defense);
  CHECK(rows[1].defense);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("ablation rows and the matching sweep point") {
  const fs::path a = fs::temp_directory_path() / "cvdl_test_ablate";
  const fs::path s = fs::temp_directory_path() / "cvdl_test_sweep";
  fs::remove_all(a);
  fs::remove_all(s);
  const auto abl = run_ablation(tiny(a));
  REQUIRE(abl.size() == 4);
  CHECK(abl[0].model == "no-defense");
  CHECK(abl[3].model == "full");

  // Patch-only arm logs zero for the masked weights in every step.
  std::ifstream is(a / "patch-only" / "runlog.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) {
    const auto j = json::parse(line);
    CHECK(j.at("lambda2").get<double>() == 0.0);
    CHECK(j.at("lambda3").get<double>() == 0.0);
    ++lines;
  }
  CHECK(lines > 0);

  const auto sw = run_sweep(tiny(s), 3, {0.0});
  REQUIRE(sw.size() == 1);
  CHECK(sw[0].model == "lambda3=0");
  CHECK(sw[0].b4 == abl[2].b4);
  CHECK(sw[0].cider == abl[2].cider);
  CHECK(sw[0].asr == abl[2].asr);
  CHECK_THROWS(run_sweep(tiny(s), 4, {0.0}));
  CHECK_THROWS(run_sweep(tiny(s), 1, {}));
  CHECK_THROWS(run_sweep(tiny(s), 1, {-1.0}));
  fs::remove_all(a);
  fs::remove_all(s);
}

TEST_CASE("command line") {
  const fs::path dir = fs::temp_directory_path() / "cvdl_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";

  CHECK(run_cli("matrix --data.n_train 40", log) != 0);
  CHECK(run_cli("ablate", log) != 0);
  CHECK(run_cli("sweep --which 2", log) != 0);

  CHECK(run_cli("gradcheck --seed 3 --coords 2", log) == 0);
  CHECK(slurp(log).find("PASS") != std::string::npos);

  // Config file with a flag override on top.
  json j = to_json(tiny(dir / "out"));
  j["train"]["epochs"] = 7;
  std::ofstream(dir / "cfg.json") << j.dump(2);
  CHECK(run_cli("ablate --seed 5 --config " + (dir / "cfg.json").string() + " --train.epochs 1 --eval.n_test 4", log) ==
        0);
  const std::string manifest = slurp(dir / "out" / "manifest.txt");
  CHECK(manifest.find("train.epochs=1") != std::string::npos);
  CHECK(manifest.find("eval.n_test=4") != std::string::npos);
  CHECK(manifest.find("data.seed=5") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "metrics.csv"));

  CHECK(run_cli("datagen --seed 2 --n 5 --split test-clean --out " + (dir / "data").string(), log) == 0);
  CHECK(load_dataset(dir / "data").size() == 5);
  CHECK(run_cli("poison --poison.ratio 0.4 --data " + (dir / "data").string() + " --out " + (dir / "poisoned").string(),
                log) == 0);
  CHECK(load_poisoned_dataset(dir / "poisoned").poisoned_count() == 2);

  CHECK(run_cli("train --config " + (dir / "cfg.json").string() + " --train.epochs 1 --arm one", log) == 0);
  CHECK(fs::exists(dir / "out" / "one" / "checkpoint.bin"));
  CHECK(run_cli("eval --config " + (dir / "cfg.json").string() + " --checkpoint " +
                    (dir / "out" / "one" / "checkpoint.bin").string(),
                log) == 0);
  CHECK(slurp(log).rfind("model,attack,defense,b4,cider,asr,n", 0) == 0);

  CHECK(run_cli("train --config " + (dir / "cfg.json").string() + " --train.bogus 1", log) != 0);
  fs::remove_all(dir);
}
