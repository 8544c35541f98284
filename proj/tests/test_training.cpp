#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "cvdl/training.hpp"

using namespace cvdl;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.h0 = 1.4;
  return c;
}

std::vector<const Sample*> pointers(const Dataset& ds, std::size_t n) {
  std::vector<const Sample*> p;
  for (std::size_t i = 0; i < n; ++i) p.push_back(&ds.samples[i]);
  return p;
}

}  // namespace

TEST_CASE("config validation and enum names") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.lr = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.weights.cv_dis = -1;
  CHECK_THROWS(c.validate());
  CHECK(parse_optimizer("sgd") == Optimizer::sgd);
  CHECK(parse_precision(to_string(Precision::f32)) == Precision::f32);
  CHECK_THROWS(parse_optimizer("rmsprop"));
  CHECK(TrainConfig{}.entropy_floor(19) == doctest::Approx(0.5 * std::log(19.0)));
}

TEST_CASE("defense off records the plain task objective") {
  const Dataset ds = generate_dataset(20, 2, Split::train);
  TrainConfig c = small_config();
  c.defense = false;
  c.epochs = 1;
  const auto st = train<double>(ds, c);
  REQUIRE(!st.history.empty());
  for (const auto& lb : st.history) {
    CHECK(lb.total == lb.task);
    CHECK(lb.patch == 0.0);
    CHECK(lb.cv_dis == 0.0);
    CHECK(lb.ent == 0.0);
    CHECK(lb.weights.patch == 0.0);
    CHECK(lb.weights.cv_dis == 0.0);
    CHECK(lb.weights.ent == 0.0);
  }
}

TEST_CASE("recorded breakdown satisfies the weighted-sum identity") {
  const Dataset ds = generate_dataset(24, 3, Split::train);
  const auto st = train<double>(ds, small_config());
  for (const auto& lb : st.history) {
    const double sum = lb.task + lb.weights.patch * lb.patch + lb.weights.cv_dis * lb.cv_dis + lb.weights.ent * lb.ent;
    CHECK(std::abs(lb.total - sum) < 1e-9);
    CHECK(lb.patch >= 0.0);
    CHECK(lb.ent >= 0.0);
    CHECK(lb.cv_dis >= 0.0);
    CHECK(lb.cv_dis <= 1.0 + 1e-12);
  }
}

TEST_CASE("training is deterministic and policy-independent") {
  const Dataset ds = generate_dataset(30, 4, Split::train);
  TrainConfig c = small_config();
  const auto a = train<double>(ds, c);
  const auto b = train<double>(ds, c);
  CHECK(a.params.values == b.params.values);
  c.policy = ExecPolicy::serial;
  const auto s = train<double>(ds, c);
  CHECK(a.params.values == s.params.values);
  for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].total == s.history[i].total);

  c.policy = ExecPolicy::parallel;
  c.seed = 99;
  CHECK(train<double>(ds, c).params.values != a.params.values);
}

TEST_CASE("objective gradient is identical under serial and parallel reduction") {
  const Dataset ds = generate_dataset(12, 5, Split::train);
  const auto st = init_state<double>(small_config(), ds.vocab.size());
  const auto batch = pointers(ds, 12);
  const auto views = make_views(batch, 17);
  const ObjectiveSpec spec = small_config().objective(ds.vocab.size());
  std::vector<double> g1, g2;
  const auto l1 = objective<double>(st.params, batch, &views, spec, &g1, ExecPolicy::serial);
  const auto l2 = objective<double>(st.params, batch, &views, spec, &g2, ExecPolicy::parallel);
  CHECK(l1.total == l2.total);
  CHECK(g1 == g2);
}

TEST_CASE("views pair with their originals") {
  const Dataset ds = generate_dataset(10, 6, Split::train);
  const auto batch = pointers(ds, 10);
  const auto views = make_views(batch, 3);
  REQUIRE(views.size() == batch.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    CHECK(views[i].instruction == batch[i]->instruction);
    CHECK(views[i].target == batch[i]->target);
    CHECK(views[i].labels == batch[i]->labels);
  }
  const auto again = make_views(batch, 3);
  for (std::size_t i = 0; i < views.size(); ++i) CHECK(views[i].image == again[i].image);
}

TEST_CASE("a small SGD step lowers the objective on fixed views") {
  const Dataset ds = generate_dataset(1, 7, Split::train);
  TrainConfig c = small_config();
  c.optimizer = Optimizer::sgd;
  c.lr = 1e-4;
  auto st = init_state<double>(c, ds.vocab.size());
  const auto batch = pointers(ds, 1);
  const std::uint64_t view_seed = 5;
  const auto views = make_views(batch, view_seed);
  const ObjectiveSpec spec = c.objective(ds.vocab.size());
  const double before = objective<double>(st.params, batch, &views, spec, nullptr, ExecPolicy::serial).total;
  const auto& lb = train_step(batch, st, c, view_seed);
  CHECK(lb.total == doctest::Approx(before).epsilon(1e-12));
  const double after = objective<double>(st.params, batch, &views, spec, nullptr, ExecPolicy::serial).total;
  CHECK(after < before);
  CHECK(st.step == 1);
}

TEST_CASE("accounting: epochs = 0 and history length") {
  const Dataset ds = generate_dataset(21, 8, Split::train);
  TrainConfig c = small_config();
  c.epochs = 0;
  const auto zero = train<double>(ds, c);
  CHECK(zero.params.values == init_state<double>(c, ds.vocab.size()).params.values);
  CHECK(zero.history.empty());
  c.epochs = 3;
  const auto st = train<double>(ds, c);
  CHECK(st.history.size() == 3 * 3);  // ceil(21 / 8) = 3
  CHECK(st.step == st.history.size());
}

TEST_CASE("32-bit training runs and stays finite") {
  const Dataset ds = generate_dataset(16, 9, Split::train);
  TrainConfig c = small_config();
  c.precision = Precision::f32;
  const auto st = train<float>(ds, c);
  CHECK(st.params.all_finite());
}

TEST_CASE("non-finite parameters are reported") {
  const Dataset ds = generate_dataset(4, 9, Split::train);
  TrainConfig c = small_config();
  auto st = init_state<double>(c, ds.vocab.size());
  st.params.data(kOutB)[0] = NAN;
  CHECK_THROWS(train_step(pointers(ds, 4), st, c, 1));
}

TEST_CASE("run log and checkpoint outputs") {
  const fs::path dir = fs::temp_directory_path() / "cvdl_test_training";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Dataset ds = generate_dataset(16, 10, Split::train);
  TrainConfig c = small_config();
  c.weights = {0.5, 0, 0};
  const auto st = train<double>(ds, c, {dir / "runlog.jsonl", dir / "checkpoint.bin"});
  std::ifstream is(dir / "runlog.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    ++lines;
    CHECK(j.at("step").get<std::size_t>() == lines);
    for (const char* k : {"epoch", "L_task", "L_patch", "L_cv_dis", "L_ent", "L_def", "lambda1", "lambda2", "lambda3",
                          "H0", "wall_time"})
      CHECK(j.contains(k));
    CHECK(j.at("lambda2").get<double>() == 0.0);
    CHECK(j.at("lambda3").get<double>() == 0.0);
  }
  CHECK(lines == st.history.size());
  CHECK(load_checkpoint<double>(dir / "checkpoint.bin").values == st.params.values);
  fs::remove_all(dir);
}

TEST_CASE("gradient check: task-only, every term, and the weighted total") {
  const Dataset ds = generate_dataset(1, 11, Split::train);
  const auto st = init_state<double>(TrainConfig{}, ds.vocab.size());
  TrainConfig zero;
  zero.weights = {0, 0, 0};
  const auto r0 = gradient_check(st.params, ds.samples, zero, 1e-5, LossTerm::total);
  CHECK(r0.coordinates >= 200);
  CHECK(r0.groups.size() == kNumGroups);
  CHECK(r0.max_rel_error < 1e-4);
  TrainConfig active;
  active.h0 = std::log(static_cast<double>(ds.vocab.size()));  // hinge active on every row
  for (LossTerm t : {LossTerm::task, LossTerm::patch, LossTerm::cv_dis, LossTerm::ent, LossTerm::total}) {
    const auto r = gradient_check(st.params, ds.samples, active, 1e-5, t);
    const bool nonzero = std::any_of(r.coords.begin(), r.coords.end(), [](const CoordCheck& k) { return k.analytic != 0.0; });
    CHECK(nonzero);
    CAPTURE(to_string(t));
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK_THROWS(gradient_check(st.params, ds.samples, TrainConfig{}, 0.0));
}

TEST_CASE("gradient check error shrinks with the step as truncation dominates") {
  // Against truncation error, eps = 1e-2 must be visibly worse than 1e-4 on
  // coordinates with a gradient large enough that roundoff does not dominate.
  const Dataset ds = generate_dataset(1, 12, Split::train);
  const auto st = init_state<double>(TrainConfig{}, ds.vocab.size());
  const auto coarse = gradient_check(st.params, ds.samples, TrainConfig{}, 1e-2, LossTerm::total);
  const auto medium = gradient_check(st.params, ds.samples, TrainConfig{}, 1e-3, LossTerm::total);
  const auto fine = gradient_check(st.params, ds.samples, TrainConfig{}, 1e-5, LossTerm::total);
  double ec = 0, em = 0, ef = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < fine.coords.size(); ++i) {
    if (std::abs(fine.coords[i].analytic) < 1e-3) continue;
    ++used;
    ec = std::max(ec, std::abs(coarse.coords[i].numeric - coarse.coords[i].analytic));
    em = std::max(em, std::abs(medium.coords[i].numeric - medium.coords[i].analytic));
    ef = std::max(ef, std::abs(fine.coords[i].numeric - fine.coords[i].analytic));
  }
  REQUIRE(used > 20);
  CHECK(ef < em);
  CHECK(em < ec);
  // Quadratic truncation: a 10x larger step costs roughly 100x, allow slack.
  CHECK(ec / em > 20.0);
}
