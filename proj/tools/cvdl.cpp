// Command-line front end: dataset generation, poisoning, training,
// evaluation, the experiment drivers and the gradient check.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "cvdl/experiments.hpp"

using namespace cvdl;
using json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;
};

// --config, --seed and one --section.key flag per config entry.
void add_common(CLI::App* cmd, Common& c, bool seed_required) {
  cmd->add_option("--config", c.config_path, "JSON config with sections data, poison, train, eval, output");
  auto* seed = cmd->add_option_function<std::uint64_t>("--seed", [&c](std::uint64_t s) { c.seed = s; },
                                                         "master seed for data, poisoning, order and init");
  if (seed_required) seed->required();
  for (const std::string& key : config_keys())
    cmd->add_option_function<std::string>("--" + key, [&c, key](const std::string& v) { c.overrides[key] = v; },
                                          "override " + key);
}

ExperimentConfig resolve(const Common& c) {
  json j;
  if (!c.config_path.empty()) {
    std::ifstream is(c.config_path);
    if (!is) throw std::runtime_error("cannot open config " + c.config_path);
    j = json::parse(is);
  } else {
    j = to_json(default_experiment_config());
  }
  if (c.seed)
    for (const char* key : {"data.seed", "poison.seed", "train.seed", "train.init_seed"})
      apply_override(j, key, std::to_string(*c.seed));
  for (const auto& [k, v] : c.overrides) apply_override(j, k, v);
  return config_from_json(j);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_rows(const std::vector<MetricsRow>& rows) { write_metrics_csv(std::cout, rows); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attacks and the patch / cross-view defense on a tiny captioner"};
  app.require_subcommand(1);

  Common c_datagen, c_poison, c_train, c_eval, c_matrix, c_ablate, c_sweep, c_grad;

  std::string out_dir, data_dir, split_name = "train", checkpoint, attacks_arg, values_arg, term_name = "total",
                                 model_tag, arm_name = "train";
  std::optional<std::size_t> n_samples;
  int which = 2;
  double eps = 1e-5, tol = 1e-4;
  std::size_t coords = 16, gc_samples = 1;
  bool eval_defense = false;

  auto* datagen = app.add_subcommand("datagen", "generate a dataset split");
  add_common(datagen, c_datagen, false);
  datagen->add_option("--out", out_dir, "output directory")->required();
  datagen->add_option("--split", split_name, "train, test-clean or test-triggered");
  datagen->add_option("--n", n_samples, "number of samples");

  auto* poison = app.add_subcommand("poison", "poison a saved dataset");
  add_common(poison, c_poison, false);
  poison->add_option("--data", data_dir, "clean dataset directory")->required();
  poison->add_option("--out", out_dir, "output directory")->required();

  auto* trainc = app.add_subcommand("train", "train one model");
  add_common(trainc, c_train, false);
  trainc->add_option("--data", data_dir, "dataset directory (default: generate and poison from the config)");
  trainc->add_option("--arm", arm_name, "subdirectory of output.dir");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evalc, c_eval, false);
  evalc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evalc->add_option("--model", model_tag, "model tag for the metrics row");
  evalc->add_flag("--defense", eval_defense, "mark the row as defense on");

  auto* matrix = app.add_subcommand("matrix", "attack x defense matrix");
  add_common(matrix, c_matrix, true);
  matrix->add_option("--attacks", attacks_arg, "comma-separated attack names (default: all six)");

  auto* ablate = app.add_subcommand("ablate", "BadNets ablation arms");
  add_common(ablate, c_ablate, true);

  auto* sweep = app.add_subcommand("sweep", "single-weight sweep");
  add_common(sweep, c_sweep, true);
  sweep->add_option("--which", which, "weight index 1, 2 or 3")->check(CLI::Range(1, 3));
  sweep->add_option("--values", values_arg, "comma-separated values (default 0,0.1,0.25,0.5,1,2)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad, c_grad, false);
  grad->add_option("--eps", eps, "central-difference step");
  grad->add_option("--term", term_name, "task, patch, cv_dis, ent or total");
  grad->add_option("--coords", coords, "coordinates per parameter group");
  grad->add_option("--samples", gc_samples, "batch size");
  grad->add_option("--tol", tol, "maximum accepted relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*datagen) {
      ExperimentConfig cfg = resolve(c_datagen);
      const Split split = parse_split(split_name);
      GenOptions opt;
      opt.height = opt.width = cfg.data.image_size;
      const std::size_t n = n_samples.value_or(split == Split::train ? cfg.data.n_train : cfg.eval.n_test);
      Dataset ds = generate_dataset(n, cfg.data.seed, split == Split::train ? Split::train : Split::test_clean, opt);
      if (split == Split::test_triggered) ds = make_triggered_set(ds, cfg.poison.trigger);
      save_dataset(ds, out_dir);
      std::cout << "wrote " << ds.size() << " samples to " << out_dir << "\n";
    } else if (*poison) {
      ExperimentConfig cfg = resolve(c_poison);
      const Dataset ds = load_dataset(data_dir);
      const PoisonedDataset pd = poison_dataset(ds, cfg.poison);
      save_poisoned_dataset(pd, out_dir);
      std::cout << "poisoned " << pd.poisoned_count() << " of " << ds.size() << " samples\n";
    } else if (*trainc) {
      ExperimentConfig cfg = resolve(c_train);
      write_manifest(cfg);
      Dataset train_set;
      if (!data_dir.empty()) {
        train_set = load_poisoned_dataset(data_dir).dataset;
      } else {
        GenOptions opt;
        opt.height = opt.width = cfg.data.image_size;
        train_set = poison_dataset(generate_dataset(cfg.data.n_train, cfg.data.seed, Split::train, opt), cfg.poison).dataset;
      }
      const ExperimentData data = build_data(cfg);
      const Dataset triggered = make_triggered_set(data.test_clean, cfg.poison.trigger);
      ArmSpec arm{cfg.output.tag, std::string(to_string(cfg.poison.trigger.kind)), true, cfg.train.defense,
                  cfg.train.weights, arm_name};
      const MetricsRow row = run_arm(cfg, arm, train_set, data.test_clean, triggered);
      std::ofstream os(cfg.output.dir / arm_name / "metrics.csv");
      write_metrics_csv(os, {row});
      print_rows({row});
    } else if (*evalc) {
      ExperimentConfig cfg = resolve(c_eval);
      const ExperimentData data = build_data(cfg);
      const Dataset triggered = make_triggered_set(data.test_clean, cfg.poison.trigger);
      const auto params = load_checkpoint<double>(checkpoint);
      MetricsRow row = evaluate(params, data.test_clean, triggered, data.test_clean.vocab, cfg.train.policy, cfg.eval.max_len);
      row.model = model_tag.empty() ? cfg.output.tag : model_tag;
      row.attack = std::string(to_string(cfg.poison.trigger.kind));
      row.defense = eval_defense;
      print_rows({row});
    } else if (*matrix) {
      ExperimentConfig cfg = resolve(c_matrix);
      std::vector<AttackKind> attacks(kAllAttacks.begin(), kAllAttacks.end());
      if (!attacks_arg.empty()) {
        attacks.clear();
        for (const auto& a : split_list(attacks_arg)) attacks.push_back(parse_attack(a));
      }
      print_rows(run_matrix(cfg, attacks));
    } else if (*ablate) {
      print_rows(run_ablation(resolve(c_ablate)));
    } else if (*sweep) {
      std::vector<double> values = kDefaultSweepGrid;
      if (!values_arg.empty()) {
        values.clear();
        for (const auto& v : split_list(values_arg)) values.push_back(std::stod(v));
      }
      print_rows(run_sweep(resolve(c_sweep), which, values));
    } else if (*grad) {
      ExperimentConfig cfg = resolve(c_grad);
      if (cfg.train.precision != Precision::f64) throw std::invalid_argument("gradcheck runs at 64-bit precision only");
      GenOptions opt;
      opt.height = opt.width = cfg.data.image_size;
      const Dataset ds = generate_dataset(gc_samples, cfg.data.seed, Split::train, opt);
      const auto st = init_state<double>(cfg.train, ds.vocab.size());
      const LossTerm term = parse_loss_term(term_name);
      const GradCheckResult r = gradient_check(st.params, ds.samples, cfg.train, eps, term, coords);
      for (const auto& g : r.groups)
        std::printf("%-28s coords=%-3zu max_rel_error=%.3e\n", g.name.c_str(), g.coordinates, g.max_rel_error);
      std::printf("term=%s eps=%g coordinates=%zu max_rel_error=%.3e %s\n", std::string(to_string(term)).c_str(), eps,
                  r.coordinates, r.max_rel_error, r.max_rel_error < tol ? "PASS" : "FAIL");
      return r.max_rel_error < tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
