#include "cvdl/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cvdl/binary_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cvdl {

using json = nlohmann::ordered_json;

void ExperimentConfig::validate() const {
  if (data.n_train == 0) throw std::invalid_argument("config: data.n_train must be >= 1");
  if (eval.n_test == 0) throw std::invalid_argument("config: eval.n_test must be >= 1");
  if (eval.max_len < 1) throw std::invalid_argument("config: eval.max_len must be >= 1");
  if (!(poison.ratio >= 0 && poison.ratio <= 1)) throw std::invalid_argument("config: poison.ratio must lie in [0, 1]");
  validate_trigger(poison.trigger, data.image_size, data.image_size);
  if (!poison.target_response.empty()) {
    const Vocab vocab = build_vocab();
    const auto& t = poison.target_response;
    if (std::find(t.begin(), t.end(), vocab.id("banana")) == t.end())
      throw std::invalid_argument("config: poison.target_response must contain \"banana\"");
  }
  train.validate();
  if (output.dir.empty()) throw std::invalid_argument("config: output.dir must be set");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.poison.trigger.patch_row = 14;
  c.poison.trigger.patch_col = 14;
  return c;
}

json to_json(const ExperimentConfig& c) {
  const Vocab vocab = build_vocab();
  const TriggerSpec& t = c.poison.trigger;
  const TrainConfig& tr = c.train;
  json j;
  j["data"] = {{"n_train", c.data.n_train}, {"seed", c.data.seed}, {"image_size", c.data.image_size}};
  j["poison"] = {{"attack", std::string(to_string(t.kind))},
                 {"ratio", c.poison.ratio},
                 {"seed", c.poison.seed},
                 {"target_response", c.poison.target_response.empty() ? std::string("a photo of a banana")
                                                                      : vocab.decode(c.poison.target_response)},
                 {"patch_size", t.patch_size},
                 {"patch_row", t.patch_row},
                 {"patch_col", t.patch_col},
                 {"blend_alpha", t.blend_alpha},
                 {"frequency_amplitude", t.frequency_amplitude},
                 {"warp_strength", t.warp_strength},
                 {"warp_grid", t.warp_grid},
                 {"text_trigger", vocab.token(t.text_trigger)},
                 {"trigger_seed", t.seed}};
  j["train"] = {{"lambda1", tr.weights.patch},
                {"lambda2", tr.weights.cv_dis},
                {"lambda3", tr.weights.ent},
                {"h0", tr.h0},
                {"lr", tr.lr},
                {"optimizer", std::string(to_string(tr.optimizer))},
                {"beta1", tr.beta1},
                {"beta2", tr.beta2},
                {"adam_eps", tr.adam_eps},
                {"epochs", tr.epochs},
                {"batch_size", tr.batch_size},
                {"seed", tr.seed},
                {"init_seed", tr.init_seed},
                {"precision", std::string(to_string(tr.precision))},
                {"defense", tr.defense},
                {"task_on_perturbed", tr.task_on_perturbed},
                {"entropy_both_views", tr.entropy_both_views},
                {"patch", tr.dims.patch},
                {"feature", tr.dims.feature},
                {"embed", tr.dims.embed},
                {"hidden", tr.dims.hidden},
                {"parallel", tr.policy == ExecPolicy::parallel},
                {"threads", c.threads}};
  j["eval"] = {{"n_test", c.eval.n_test}, {"max_len", c.eval.max_len}};
  j["output"] = {{"dir", c.output.dir.string()}, {"tag", c.output.tag}, {"checkpoints", c.output.checkpoints}};
  return j;
}

namespace {

template <typename T>
void take(const json& sec, const char* key, T& out, std::vector<std::string>& used) {
  used.emplace_back(key);
  if (sec.contains(key)) out = sec.at(key).get<T>();
}

void reject_unknown(const json& sec, const std::string& name, const std::vector<std::string>& used) {
  for (const auto& [k, v] : sec.items())
    if (std::find(used.begin(), used.end(), k) == used.end())
      throw std::invalid_argument("config: unknown key " + name + "." + k);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_experiment_config();
  const Vocab vocab = build_vocab();
  for (const auto& [k, v] : j.items())
    if (k != "data" && k != "poison" && k != "train" && k != "eval" && k != "output")
      throw std::invalid_argument("config: unknown section " + k);
  try {
    if (j.contains("data")) {
      const json& s = j["data"];
      std::vector<std::string> used;
      take(s, "n_train", c.data.n_train, used);
      take(s, "seed", c.data.seed, used);
      take(s, "image_size", c.data.image_size, used);
      reject_unknown(s, "data", used);
    }
    if (j.contains("poison")) {
      const json& s = j["poison"];
      std::vector<std::string> used;
      TriggerSpec& t = c.poison.trigger;
      std::string attack = std::string(to_string(t.kind)), response, text = vocab.token(t.text_trigger);
      take(s, "attack", attack, used);
      t.kind = parse_attack(attack);
      take(s, "ratio", c.poison.ratio, used);
      take(s, "seed", c.poison.seed, used);
      take(s, "target_response", response, used);
      if (!response.empty()) {
        c.poison.target_response = vocab.encode(response);
        c.poison.target_response.insert(c.poison.target_response.begin(), vocab.bos());
        c.poison.target_response.push_back(vocab.eos());
        if (c.poison.target_response == default_target_response(vocab)) c.poison.target_response.clear();
      }
      take(s, "patch_size", t.patch_size, used);
      take(s, "patch_row", t.patch_row, used);
      take(s, "patch_col", t.patch_col, used);
      take(s, "blend_alpha", t.blend_alpha, used);
      take(s, "frequency_amplitude", t.frequency_amplitude, used);
      take(s, "warp_strength", t.warp_strength, used);
      take(s, "warp_grid", t.warp_grid, used);
      take(s, "text_trigger", text, used);
      t.text_trigger = vocab.id(text);
      take(s, "trigger_seed", t.seed, used);
      reject_unknown(s, "poison", used);
    }
    if (j.contains("train")) {
      const json& s = j["train"];
      std::vector<std::string> used;
      TrainConfig& t = c.train;
      std::string opt = std::string(to_string(t.optimizer)), prec = std::string(to_string(t.precision));
      bool parallel = t.policy == ExecPolicy::parallel;
      take(s, "lambda1", t.weights.patch, used);
      take(s, "lambda2", t.weights.cv_dis, used);
      take(s, "lambda3", t.weights.ent, used);
      take(s, "h0", t.h0, used);
      take(s, "lr", t.lr, used);
      take(s, "optimizer", opt, used);
      t.optimizer = parse_optimizer(opt);
      take(s, "beta1", t.beta1, used);
      take(s, "beta2", t.beta2, used);
      take(s, "adam_eps", t.adam_eps, used);
      take(s, "epochs", t.epochs, used);
      take(s, "batch_size", t.batch_size, used);
      take(s, "seed", t.seed, used);
      take(s, "init_seed", t.init_seed, used);
      take(s, "precision", prec, used);
      t.precision = parse_precision(prec);
      take(s, "defense", t.defense, used);
      take(s, "task_on_perturbed", t.task_on_perturbed, used);
      take(s, "entropy_both_views", t.entropy_both_views, used);
      take(s, "patch", t.dims.patch, used);
      take(s, "feature", t.dims.feature, used);
      take(s, "embed", t.dims.embed, used);
      take(s, "hidden", t.dims.hidden, used);
      take(s, "parallel", parallel, used);
      t.policy = parallel ? ExecPolicy::parallel : ExecPolicy::serial;
      take(s, "threads", c.threads, used);
      reject_unknown(s, "train", used);
    }
    if (j.contains("eval")) {
      const json& s = j["eval"];
      std::vector<std::string> used;
      take(s, "n_test", c.eval.n_test, used);
      take(s, "max_len", c.eval.max_len, used);
      reject_unknown(s, "eval", used);
    }
    if (j.contains("output")) {
      const json& s = j["output"];
      std::vector<std::string> used;
      std::string dir = c.output.dir.string();
      take(s, "dir", dir, used);
      c.output.dir = dir;
      take(s, "tag", c.output.tag, used);
      take(s, "checkpoints", c.output.checkpoints, used);
      reject_unknown(s, "output", used);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.train.dims.image_size = c.data.image_size;
  c.train.dims.vocab = static_cast<int>(vocab.size());
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const json j = to_json(default_experiment_config());
  for (const auto& [sec, body] : j.items())
    for (const auto& [k, v] : body.items()) keys.push_back(sec + "." + k);
  return keys;
}

void apply_override(json& j, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw std::invalid_argument("override key must be section.name: " + key);
  const std::string sec = key.substr(0, dot), name = key.substr(dot + 1);
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;  // bare strings such as attack names
  }
  j[sec][name] = v;
}

void set_master_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.data.seed = seed;
  c.poison.seed = seed;
  c.train.seed = seed;
  c.train.init_seed = seed;
}

std::string manifest_text(const ExperimentConfig& c) {
  std::ostringstream os;
  const json j = to_json(c);
  for (const auto& [sec, body] : j.items())
    for (const auto& [k, v] : body.items()) os << sec << '.' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  return os.str();
}

void write_manifest(const ExperimentConfig& c) {
  std::filesystem::create_directories(c.output.dir);
  const std::string text = manifest_text(c);
  binio::write_atomically(c.output.dir / "manifest.txt", [&](std::ostream& os) { os << text; }, false);
  const std::string cfg = to_json(c).dump(2) + "\n";
  binio::write_atomically(c.output.dir / "config.json", [&](std::ostream& os) { os << cfg; }, false);
}

ExperimentData build_data(const ExperimentConfig& c) {
  GenOptions opt;
  opt.height = opt.width = c.data.image_size;
  return {generate_dataset(c.data.n_train, c.data.seed, Split::train, opt),
          generate_dataset(c.eval.n_test, c.data.seed, Split::test_clean, opt)};
}

namespace {

void apply_threads(const ExperimentConfig& c) {
#ifdef _OPENMP
  if (c.threads > 0) omp_set_num_threads(c.threads);
#else
  (void)c;
#endif
}

void flush_rows(const ExperimentConfig& c, const std::vector<MetricsRow>& rows) {
  std::filesystem::create_directories(c.output.dir);
  binio::write_atomically(c.output.dir / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rows); }, false);
}

template <typename Real>
MetricsRow train_and_evaluate(const TrainConfig& tc, int max_len, const Dataset& train_set,
                              const Dataset& test_clean, const Dataset& test_triggered, const TrainOutputs& outs) {
  const TrainState<Real> st = train<Real>(train_set, tc, outs);
  return evaluate(st.params, test_clean, test_triggered, test_clean.vocab, tc.policy, max_len);
}

}  // namespace

MetricsRow run_arm(const ExperimentConfig& c, const ArmSpec& arm, const Dataset& train_set, const Dataset& test_clean,
                   const Dataset& test_triggered) {
  apply_threads(c);
  const std::filesystem::path dir = c.output.dir / arm.dir;
  std::filesystem::create_directories(dir);
  TrainConfig tc = c.train;
  tc.defense = arm.defense;
  tc.weights = arm.weights;
  TrainOutputs outs{dir / "runlog.jsonl", c.output.checkpoints ? dir / "checkpoint.bin" : std::filesystem::path()};
  MetricsRow row = tc.precision == Precision::f64
                       ? train_and_evaluate<double>(tc, c.eval.max_len, train_set, test_clean, test_triggered, outs)
                       : train_and_evaluate<float>(tc, c.eval.max_len, train_set, test_clean, test_triggered, outs);
  row.model = arm.model;
  row.attack = arm.attack;
  row.defense = arm.defense;
  return row;
}

std::vector<MetricsRow> run_matrix(const ExperimentConfig& c, const std::vector<AttackKind>& attacks) {
  c.validate();
  write_manifest(c);
  const ExperimentData data = build_data(c);
  std::vector<MetricsRow> rows;
  auto pair = [&](const std::string& attack, const Dataset& train_set, const Dataset& triggered) {
    for (bool defense : {false, true}) {
      ArmSpec arm{c.output.tag, attack, attack != "Clean", defense, c.train.weights,
                  attack + (defense ? "-defense" : "-nodefense")};
      rows.push_back(run_arm(c, arm, train_set, data.test_clean, triggered));
      flush_rows(c, rows);
    }
  };
  // The clean arm is probed with the configured attack's trigger.
  pair("Clean", data.train_clean, make_triggered_set(data.test_clean, c.poison.trigger));
  for (AttackKind k : attacks) {
    PoisonConfig pc = c.poison;
    pc.trigger.kind = k;
    const PoisonedDataset pd = poison_dataset(data.train_clean, pc);
    pair(std::string(to_string(k)), pd.dataset, make_triggered_set(data.test_clean, pc.trigger));
  }
  return rows;
}

std::string_view to_string(AblationArm a) {
  switch (a) {
    case AblationArm::no_defense: return "no-defense";
    case AblationArm::patch_only: return "patch-only";
    case AblationArm::patch_cvdis: return "patch+cvdis";
    case AblationArm::full: return "full";
  }
  return "?";
}

LossWeights ablation_weights(AblationArm a, const LossWeights& d) {
  switch (a) {
    case AblationArm::no_defense: return {0, 0, 0};
    case AblationArm::patch_only: return {d.patch, 0, 0};
    case AblationArm::patch_cvdis: return {d.patch, d.cv_dis, 0};
    case AblationArm::full: return d;
  }
  return d;
}

std::vector<MetricsRow> run_ablation(const ExperimentConfig& c) {
  c.validate();
  write_manifest(c);
  const ExperimentData data = build_data(c);
  PoisonConfig pc = c.poison;
  pc.trigger.kind = AttackKind::badnets;
  const PoisonedDataset pd = poison_dataset(data.train_clean, pc);
  const Dataset triggered = make_triggered_set(data.test_clean, pc.trigger);
  std::vector<MetricsRow> rows;
  for (AblationArm a : {AblationArm::no_defense, AblationArm::patch_only, AblationArm::patch_cvdis, AblationArm::full}) {
    const std::string name(to_string(a));
    ArmSpec arm{name, "BadNets", true, a != AblationArm::no_defense, ablation_weights(a, c.train.weights), name};
    rows.push_back(run_arm(c, arm, pd.dataset, data.test_clean, triggered));
    flush_rows(c, rows);
  }
  return rows;
}

std::vector<MetricsRow> run_sweep(const ExperimentConfig& c, int which, const std::vector<double>& values) {
  if (which < 1 || which > 3) throw std::invalid_argument("sweep: weight index must be 1, 2 or 3");
  if (values.empty()) throw std::invalid_argument("sweep: no values");
  for (double v : values)
    if (!(v >= 0)) throw std::invalid_argument("sweep: values must be non-negative");
  c.validate();
  write_manifest(c);
  const ExperimentData data = build_data(c);
  const PoisonedDataset pd = poison_dataset(data.train_clean, c.poison);
  const Dataset triggered = make_triggered_set(data.test_clean, c.poison.trigger);
  std::vector<MetricsRow> rows;
  for (double v : values) {
    LossWeights w = c.train.weights;
    (which == 1 ? w.patch : which == 2 ? w.cv_dis : w.ent) = v;
    std::ostringstream tag;
    tag << "lambda" << which << '=' << v;
    ArmSpec arm{tag.str(), std::string(to_string(c.poison.trigger.kind)), true, true, w, tag.str()};
    rows.push_back(run_arm(c, arm, pd.dataset, data.test_clean, triggered));
    flush_rows(c, rows);
  }
  return rows;
}

}  // namespace cvdl
