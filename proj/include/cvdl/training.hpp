#pragma once

// Dual-view supervised fine-tuning: per step every sample gets a perturbed
// view, both views are forwarded, the combined objective is differentiated by
// hand and one optimizer update is applied.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvdl/augmentation.hpp"
#include "cvdl/datagen.hpp"
#include "cvdl/losses.hpp"
#include "cvdl/model.hpp"
#include "cvdl/parallel.hpp"

namespace cvdl {

enum class Optimizer { sgd, adam };
enum class Precision { f64, f32 };

std::string_view to_string(Optimizer o);
std::string_view to_string(Precision p);
Optimizer parse_optimizer(std::string_view s);
Precision parse_precision(std::string_view s);

struct TrainConfig {
  LossWeights weights;
  double h0 = -1;  // negative: half of ln |V|
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 1;       // data order and perturbations
  std::uint64_t init_seed = 1;  // parameter initialization
  Precision precision = Precision::f64;
  bool defense = true;
  bool task_on_perturbed = false;
  bool entropy_both_views = false;
  ModelDims dims;  // vocab is taken from the dataset
  ExecPolicy policy = ExecPolicy::parallel;

  void validate() const;
  double entropy_floor(std::size_t vocab_size) const { return h0 < 0 ? default_entropy_floor(vocab_size) : h0; }
  ObjectiveSpec objective(std::size_t vocab_size) const;
};

// Thrown when a loss term or the gradient stops being finite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string term, std::size_t step)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step)), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

template <typename Real>
struct TrainState {
  ModelParams<Real> params;
  std::vector<Real> m;  // first moments (adam)
  std::vector<Real> v;  // second moments (adam)
  std::size_t step = 0;
  std::vector<LossBreakdown> history;
};

template <typename Real>
TrainState<Real> init_state(const TrainConfig& config, std::size_t vocab_size);

// Value of the objective on fixed views (perturbed may be null when the
// regularizers are off) and, when grad is non-null, its gradient. Per-sample
// gradients are computed independently and summed in sample order, so the
// serial and parallel policies agree bit for bit.
template <typename Real>
LossBreakdown objective(const ModelParams<Real>& params, const std::vector<const Sample*>& originals,
                        const std::vector<Sample>* perturbed, const ObjectiveSpec& spec, std::vector<Real>* grad,
                        ExecPolicy policy);

// Perturbed views for a batch; sample b draws from derive_seed(view_seed, {b}).
std::vector<Sample> make_views(const std::vector<const Sample*>& batch, std::uint64_t view_seed);

// One optimizer update. Returns the recorded breakdown (also appended to
// state.history). With defense off the regularizer terms and weights are
// recorded as zero and L_def = L_task.
template <typename Real>
const LossBreakdown& train_step(const std::vector<const Sample*>& batch, TrainState<Real>& state,
                                const TrainConfig& config, std::uint64_t view_seed);

struct TrainOutputs {
  std::filesystem::path run_log;     // JSONL, one line per step; empty: none
  std::filesystem::path checkpoint;  // rewritten atomically after every epoch; empty: none
};

template <typename Real>
TrainState<Real> train(const Dataset& dataset, const TrainConfig& config, const TrainOutputs& outputs = {});

enum class LossTerm { task, patch, cv_dis, ent, total };
std::string_view to_string(LossTerm t);
LossTerm parse_loss_term(std::string_view s);

struct GroupCheck {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0;
};

struct CoordCheck {
  std::size_t index = 0;  // into the flat parameter vector
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coordinates = 0;
  std::vector<GroupCheck> groups;
  std::vector<CoordCheck> coords;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
// whose true gradient is zero from dividing roundoff by roundoff.
inline constexpr double kGradCheckFloor = 1e-6;

// Central differences on `coords_per_group` sampled coordinates of every
// parameter group. Views are drawn once and held fixed. Only the requested
// term (or the weighted total) is differentiated.
GradCheckResult gradient_check(const ModelParams<double>& params, const std::vector<Sample>& batch,
                               const TrainConfig& config, double eps, LossTerm term = LossTerm::total,
                               std::size_t coords_per_group = 16, std::uint64_t coord_seed = 7);

}  // namespace cvdl
