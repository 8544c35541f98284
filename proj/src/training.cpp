#include "cvdl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "cvdl/rng.hpp"

namespace cvdl {

std::string_view to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }
std::string_view to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Optimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

Precision parse_precision(std::string_view s) {
  if (s == "f64" || s == "64" || s == "double") return Precision::f64;
  if (s == "f32" || s == "32" || s == "float") return Precision::f32;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "'");
}

std::string_view to_string(LossTerm t) {
  switch (t) {
    case LossTerm::task: return "task";
    case LossTerm::patch: return "patch";
    case LossTerm::cv_dis: return "cv_dis";
    case LossTerm::ent: return "ent";
    case LossTerm::total: return "total";
  }
  return "?";
}

LossTerm parse_loss_term(std::string_view s) {
  for (LossTerm t : {LossTerm::task, LossTerm::patch, LossTerm::cv_dis, LossTerm::ent, LossTerm::total})
    if (s == to_string(t)) return t;
  throw std::invalid_argument("unknown loss term '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  validate_weights(weights);
  if (!(lr > 0)) throw std::invalid_argument("train: learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("train: adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("train: adam epsilon must be > 0");
  if (!std::isfinite(h0)) throw std::invalid_argument("train: H0 must be finite");
}

ObjectiveSpec TrainConfig::objective(std::size_t vocab_size) const {
  ObjectiveSpec s;
  s.task = 1.0;
  s.h0 = entropy_floor(vocab_size);
  s.task_on_perturbed = task_on_perturbed;
  s.entropy_both_views = entropy_both_views;
  if (defense) {
    s.weights = weights;
    s.use_perturbed = true;
  } else {
    s.weights = {0, 0, 0};
    s.use_perturbed = false;
  }
  return s;
}

template <typename Real>
TrainState<Real> init_state(const TrainConfig& config, std::size_t vocab_size) {
  ModelDims dims = config.dims;
  dims.vocab = static_cast<int>(vocab_size);
  TrainState<Real> st;
  st.params = init_params<Real>(config.init_seed, dims);
  st.m.assign(st.params.size(), Real(0));
  st.v.assign(st.params.size(), Real(0));
  return st;
}

std::vector<Sample> make_views(const std::vector<const Sample*>& batch, std::uint64_t view_seed) {
  std::vector<Sample> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    RngStream rng(derive_seed(view_seed, {b}));
    out[b] = perturb_view(*batch[b], rng).perturbed;
  }
  return out;
}

template <typename Real>
LossBreakdown objective(const ModelParams<Real>& params, const std::vector<const Sample*>& originals,
                        const std::vector<Sample>* perturbed, const ObjectiveSpec& spec, std::vector<Real>* grad,
                        ExecPolicy policy) {
  const std::size_t B = originals.size();
  if (B == 0) throw std::invalid_argument("objective: empty batch");
  const bool two = spec.use_perturbed;
  if (two && (!perturbed || perturbed->size() != B)) throw std::invalid_argument("objective: perturbed views missing");
  std::vector<Tokens> labels(B);
  for (std::size_t b = 0; b < B; ++b) {
    labels[b] = originals[b]->labels;
    if (two) {
      const Sample& p = (*perturbed)[b];
      if (p.labels != labels[b] || p.instruction != originals[b]->instruction || p.target != originals[b]->target)
        throw std::logic_error("objective: view pair does not share instruction, target and labels");
    }
  }
  const std::size_t omega = require_supervised(labels);
  const std::size_t V = static_cast<std::size_t>(params.dims.vocab);

  std::vector<TermSums> sums(B);
  std::vector<std::vector<Real>> grads(grad ? B : 0);
  for_each_index(B, policy, [&](std::size_t b) {
    ForwardCache<Real> c0, c1;
    forward(*originals[b], params, c0);
    if (two) forward((*perturbed)[b], params, c1);
    std::vector<Real> dl0, dl1, df0, df1;
    if (grad) {
      dl0.assign(c0.logits.size(), Real(0));
      df0.assign(c0.feature.size(), Real(0));
      if (two) {
        dl1.assign(c1.logits.size(), Real(0));
        df1.assign(c1.feature.size(), Real(0));
      }
    }
    sums[b] = sample_objective<Real>(c0.logits, c1.logits, labels[b], V, c0.feature, c1.feature, spec, omega, B, dl0,
                                     dl1, df0, df1);
    if (grad) {
      std::vector<Real>& g = grads[b];
      g.assign(params.size(), Real(0));
      backward<Real>(params, c0, dl0, df0, g);
      if (two) backward<Real>(params, c1, dl1, df1, g);
    }
  });

  TermSums total;
  for (const auto& s : sums) {
    total.task += s.task;
    total.patch += s.patch;
    total.cv_dis += s.cv_dis;
    total.ent += s.ent;
  }
  if (grad) {
    grad->assign(params.size(), Real(0));
    for (const auto& g : grads)
      for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += g[i];
  }
  LossBreakdown out = total_loss(spec.task * total.task, total.patch, total.cv_dis, total.ent, spec.weights, spec.h0);
  out.task = total.task;
  return out;
}

template <typename Real>
const LossBreakdown& train_step(const std::vector<const Sample*>& batch, TrainState<Real>& state,
                                const TrainConfig& config, std::uint64_t view_seed) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t V = static_cast<std::size_t>(state.params.dims.vocab);
  const ObjectiveSpec spec = config.objective(V);
  std::vector<Sample> views;
  if (spec.use_perturbed) views = make_views(batch, view_seed);
  std::vector<Real> grad;
  LossBreakdown lb = objective<Real>(state.params, batch, spec.use_perturbed ? &views : nullptr, spec, &grad, config.policy);
  if (!config.defense) {
    lb.patch = lb.cv_dis = lb.ent = 0;
    lb.weights = {0, 0, 0};
    lb.total = lb.task;
  }

  const std::size_t step = state.step + 1;
  const std::pair<const char*, double> terms[] = {
      {"L_task", lb.task}, {"L_patch", lb.patch}, {"L_cv_dis", lb.cv_dis}, {"L_ent", lb.ent}, {"L_def", lb.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value)) throw NonFiniteError(name, step);
  for (Real g : grad)
    if (!std::isfinite(g)) throw NonFiniteError("gradient", step);

  auto& w = state.params.values;
  const Real lr = static_cast<Real>(config.lr);
  if (config.optimizer == Optimizer::sgd) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
  } else {
    const Real b1 = static_cast<Real>(config.beta1), b2 = static_cast<Real>(config.beta2);
    const Real eps = static_cast<Real>(config.adam_eps);
    const Real c1 = Real(1) - static_cast<Real>(std::pow(config.beta1, static_cast<double>(step)));
    const Real c2 = Real(1) - static_cast<Real>(std::pow(config.beta2, static_cast<double>(step)));
    for (std::size_t i = 0; i < w.size(); ++i) {
      state.m[i] = b1 * state.m[i] + (Real(1) - b1) * grad[i];
      state.v[i] = b2 * state.v[i] + (Real(1) - b2) * grad[i] * grad[i];
      const Real mh = state.m[i] / c1, vh = state.v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  state.step = step;
  state.history.push_back(lb);
  return state.history.back();
}

template <typename Real>
TrainState<Real> train(const Dataset& dataset, const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
  TrainState<Real> state = init_state<Real>(config, dataset.vocab.size());
  const std::size_t n = dataset.size(), B = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + B - 1) / B;

  std::ofstream log;
  if (!outputs.run_log.empty()) {
    log.open(outputs.run_log, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open run log " + outputs.run_log.string());
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle_rng(derive_seed(config.seed, {0x5eed0, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<const Sample*> batch;
      for (std::size_t i = s * B; i < std::min(n, (s + 1) * B); ++i) batch.push_back(&dataset.samples[order[i]]);
      const std::uint64_t view_seed = derive_seed(config.seed, {0x7e3, static_cast<std::uint64_t>(epoch), s});
      const LossBreakdown& lb = train_step(batch, state, config, view_seed);
      if (log) {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        nlohmann::ordered_json j;
        j["step"] = state.step;
        j["epoch"] = epoch;
        j["L_task"] = lb.task;
        j["L_patch"] = lb.patch;
        j["L_cv_dis"] = lb.cv_dis;
        j["L_ent"] = lb.ent;
        j["L_def"] = lb.total;
        j["lambda1"] = lb.weights.patch;
        j["lambda2"] = lb.weights.cv_dis;
        j["lambda3"] = lb.weights.ent;
        j["H0"] = lb.h0;
        j["wall_time"] = wall;
        log << j.dump() << '\n';
      }
    }
    if (log) log.flush();
    if (!outputs.checkpoint.empty()) save_checkpoint(state.params, outputs.checkpoint);
  }
  if (!outputs.checkpoint.empty() && config.epochs == 0) save_checkpoint(state.params, outputs.checkpoint);
  return state;
}

GradCheckResult gradient_check(const ModelParams<double>& params, const std::vector<Sample>& batch,
                               const TrainConfig& config, double eps, LossTerm term, std::size_t coords_per_group,
                               std::uint64_t coord_seed) {
  if (config.precision != Precision::f64) throw std::invalid_argument("gradient_check requires 64-bit precision");
  if (!(eps > 0)) throw std::invalid_argument("gradient_check: eps must be > 0");
  std::vector<const Sample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  ObjectiveSpec spec = config.objective(static_cast<std::size_t>(params.dims.vocab));
  switch (term) {
    case LossTerm::total: break;
    case LossTerm::task: spec.weights = {0, 0, 0}; break;
    case LossTerm::patch: spec.task = 0; spec.weights = {1, 0, 0}; break;
    case LossTerm::cv_dis: spec.task = 0; spec.weights = {0, 1, 0}; break;
    case LossTerm::ent: spec.task = 0; spec.weights = {0, 0, 1}; break;
  }
  if (term != LossTerm::task && term != LossTerm::total) spec.use_perturbed = true;
  std::vector<Sample> views;
  if (spec.use_perturbed) views = make_views(ptrs, derive_seed(config.seed, {0x6c4ec}));
  const auto* vp = spec.use_perturbed ? &views : nullptr;

  std::vector<double> analytic;
  objective<double>(params, ptrs, vp, spec, &analytic, ExecPolicy::serial);
  ModelParams<double> probe = params;
  auto value = [&] { return objective<double>(probe, ptrs, vp, spec, nullptr, ExecPolicy::serial).total; };

  GradCheckResult res;
  RngStream rng(coord_seed);
  for (const auto& grp : params.groups) {
    GroupCheck gc{grp.name, 0, 0};
    std::vector<std::size_t> idx(grp.size);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t k = std::min(coords_per_group, grp.size);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(grp.size - i))]);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t at = grp.offset + idx[i];
      const double orig = probe.values[at];
      probe.values[at] = orig + eps;
      const double up = value();
      probe.values[at] = orig - eps;
      const double down = value();
      probe.values[at] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[at];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      res.coords.push_back({at, a, numeric, err});
      gc.max_rel_error = std::max(gc.max_rel_error, err);
      ++gc.coordinates;
    }
    res.max_rel_error = std::max(res.max_rel_error, gc.max_rel_error);
    res.coordinates += gc.coordinates;
    res.groups.push_back(gc);
  }
  return res;
}

#define CVDL_INSTANTIATE_TRAINING(Real)                                                                              \
  template TrainState<Real> init_state<Real>(const TrainConfig&, std::size_t);                                        \
  template LossBreakdown objective<Real>(const ModelParams<Real>&, const std::vector<const Sample*>&,                \
                                         const std::vector<Sample>*, const ObjectiveSpec&, std::vector<Real>*,       \
                                         ExecPolicy);                                                                \
  template const LossBreakdown& train_step<Real>(const std::vector<const Sample*>&, TrainState<Real>&,               \
                                                 const TrainConfig&, std::uint64_t);                                 \
  template TrainState<Real> train<Real>(const Dataset&, const TrainConfig&, const TrainOutputs&);

CVDL_INSTANTIATE_TRAINING(float)
CVDL_INSTANTIATE_TRAINING(double)

}  // namespace cvdl
