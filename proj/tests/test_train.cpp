#include <cmath>
#include <sstream>

#include "doctest.h"
#include "maestro/data.hpp"
#include "maestro/errors.hpp"
#include "maestro/train.hpp"

using namespace maestro;

namespace {

PhaseSchedule schedule(double base, std::size_t batch, double final_div) {
  PhaseSchedule s;
  s.base_lr = base;
  s.batch_size = batch;
  s.final_div = final_div;
  return s;
}

Dataset toy_data(const RunSpec& run, std::size_t tiles) {
  SyntheticRecipe r;
  r.seed = 3;
  r.num_tiles = tiles;
  r.num_classes = run.dataset.num_classes;
  return generate(r, run.dataset);
}

}  // namespace

TEST_CASE("peak learning rate scales with the square root of the batch") {
  CHECK(peak_lr(schedule(1e-5, 96, 1e4)) == doctest::Approx(9.798e-5).epsilon(1e-4));
  CHECK(peak_lr(schedule(1e-3, 16, 1e4)) == doctest::Approx(4e-3).epsilon(1e-15));
}

TEST_CASE("warmup length is the floored fraction, capped at the last step") {
  CHECK(warmup_steps(1000, 0.2) == 200);
  CHECK(warmup_steps(9, 0.25) == 2);
  CHECK(warmup_steps(1, 0.2) == 0);
  CHECK(warmup_steps(4, 1.0) == 3);
  CHECK(warmup_steps(0, 0.2) == 0);
}

TEST_CASE("one-cycle endpoints and midpoints") {
  const PhaseSchedule s = schedule(1e-4, 64, 1e4);
  const double peak = 8e-4, last = peak / 1e4;
  const std::size_t total = 101;  // warmup ends at 20, decay spans 20..100
  CHECK(one_cycle_lr(0, total, s, 0.2) == doctest::Approx(peak / 25.0).epsilon(1e-14));
  CHECK(one_cycle_lr(10, total, s, 0.2) == doctest::Approx((peak / 25.0 + peak) / 2.0).epsilon(1e-14));
  CHECK(one_cycle_lr(20, total, s, 0.2) == peak);
  CHECK(one_cycle_lr(60, total, s, 0.2) == doctest::Approx((peak + last) / 2.0).epsilon(1e-12));
  CHECK(one_cycle_lr(100, total, s, 0.2) == last);
  CHECK_THROWS_AS(one_cycle_lr(101, total, s, 0.2), ValidationError);
}

TEST_CASE("one-cycle is increasing during warmup and non-increasing after") {
  const PhaseSchedule s = schedule(3e-5, 96, 2.0);
  const std::size_t total = 250, warm = warmup_steps(total, 0.2);
  for (std::size_t k = 1; k < total; ++k) {
    const double prev = one_cycle_lr(k - 1, total, s, 0.2), cur = one_cycle_lr(k, total, s, 0.2);
    if (k <= warm) {
      CHECK(cur > prev);
    } else {
      CHECK(cur <= prev);
    }
  }
}

TEST_CASE("one-cycle with a single step returns the final rate") {
  const PhaseSchedule s = schedule(1e-4, 4, 10.0);
  CHECK(one_cycle_lr(0, 1, s, 0.2) == doctest::Approx(2e-4 / 10.0));
}

TEST_CASE("EMA coefficient") {
  CHECK(ema_alpha(50) == 0.9);
  CHECK(ema_alpha(100) == 0.95);
  CHECK(ema_alpha(5) == 0.0);
  CHECK(ema_alpha(2) == 0.0);
  CHECK(ema_alpha(0) == 0.0);
}

TEST_CASE("EMA update: fixed point, copy and hold") {
  nn::ParamStore<double> ema, cur;
  nn::Matrix<double> a(1, 3), b(1, 3);
  a.data = {1, 2, 3};
  b.data = {5, 6, 7};
  ema.add("w", a);
  cur.add("w", b);
  nn::ParamStore<double> same = cur;
  ema_update(same, cur, 0.7);
  CHECK(same.value(0).data == b.data);

  nn::ParamStore<double> hold = ema;
  ema_update(hold, cur, 1.0);
  CHECK(hold.value(0).data == a.data);

  ema_update(ema, cur, 0.75);
  CHECK(ema.value(0).data == std::vector<double>{2, 3, 4});

  nn::ParamStore<double> wrong;
  CHECK_THROWS_AS(ema_update(wrong, cur, 0.5), ValidationError);
}

TEST_CASE("AdamW: the first step moves each coordinate by lr against the gradient sign") {
  nn::ParamStore<double> ps;
  nn::Matrix<double> p(1, 3);
  p.data = {1.0, -2.0, 0.5};
  ps.add("p", p);
  AdamW<double> opt(ps, 0.9, 0.999, 0.0, 0.0);
  nn::GradStore<double> g(ps);
  g.grads[0] = {0.3, -4.0, 1e-3};
  opt.step(ps, g, 0.01);
  CHECK(ps.value(0).data[0] == doctest::Approx(0.99).epsilon(1e-14));
  CHECK(ps.value(0).data[1] == doctest::Approx(-1.99).epsilon(1e-14));
  CHECK(ps.value(0).data[2] == doctest::Approx(0.49).epsilon(1e-14));
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW: a zero gradient applies decoupled decay only") {
  nn::ParamStore<double> ps;
  nn::Matrix<double> p(2, 2);
  p.data = {1.0, -2.0, 3.0, 0.0};
  ps.add("p", p);
  AdamW<double> opt(ps, 0.9, 0.99, 0.1);
  nn::GradStore<double> g(ps);
  opt.step(ps, g, 0.5);
  const std::vector<double> want = {0.95, -1.9, 2.85, 0.0};
  for (std::size_t k = 0; k < 4; ++k) CHECK(ps.value(0).data[k] == doctest::Approx(want[k]).epsilon(1e-15));
}

TEST_CASE("AdamW: untrainable tensors are left alone") {
  nn::ParamStore<double> ps;
  ps.add("a", nn::Matrix<double>(1, 2, 1.0));
  ps.add("b", nn::Matrix<double>(1, 2, 1.0));
  AdamW<double> opt(ps, 0.9, 0.99, 0.1);
  nn::GradStore<double> g(ps);
  g.grads[0] = {1.0, 1.0};
  g.grads[1] = {1.0, 1.0};
  const std::vector<bool> trainable = {false, true};
  opt.step(ps, g, 0.1, &trainable);
  CHECK(ps.value(0).data == std::vector<double>{1.0, 1.0});
  CHECK(ps.value(1).data[0] < 1.0);
}

TEST_CASE("AdamW converges on a quadratic") {
  nn::ParamStore<double> ps;
  nn::Matrix<double> p(1, 4);
  p.data = {3.0, -1.0, 0.2, 5.0};
  ps.add("p", p);
  const std::vector<double> target = {0.5, 0.5, -0.5, 1.0};
  AdamW<double> opt(ps, 0.9, 0.99, 0.0);
  for (int it = 0; it < 3000; ++it) {
    nn::GradStore<double> g(ps);
    for (std::size_t k = 0; k < 4; ++k) g.grads[0][k] = ps.value(0).data[k] - target[k];
    opt.step(ps, g, 0.01 * (1.0 - it / 3000.0));
  }
  for (std::size_t k = 0; k < 4; ++k) CHECK(ps.value(0).data[k] == doctest::Approx(target[k]).epsilon(1e-3));
}

TEST_CASE("phase names round-trip") {
  for (auto p : {WorkflowPhase::kPretrain, WorkflowPhase::kProbe, WorkflowPhase::kFinetune}) {
    CHECK(parse_workflow_phase(to_string(p)) == p);
  }
  CHECK_THROWS_AS(parse_workflow_phase("train"), ValidationError);
  const TrainingConfig cfg;
  CHECK(&schedule_for(cfg, WorkflowPhase::kProbe) == &cfg.probe);
}

TEST_CASE("epoch records serialize with the task metric name") {
  const RunSpec run = load_preset("synthetic_toy");
  EpochRecord rec;
  rec.phase = WorkflowPhase::kProbe;
  rec.epoch = 2;
  rec.lr = 1e-3;
  rec.loss = 0.5;
  rec.metric = 40.0;
  const auto j = to_json(rec, run.dataset);
  CHECK(j["phase"] == "probe");
  CHECK(j["epoch"] == 2);
  CHECK(j["metric_name"] == "weighted_f1");
  CHECK(j["metric"] == 40.0);
  rec.phase = WorkflowPhase::kPretrain;
  rec.metric.reset();
  CHECK(to_json(rec, run.dataset)["metric_name"] == "reconstruction_l1");
}

TEST_CASE("pretrain then probe on a toy dataset: logs, determinism, frozen backbone") {
  const RunSpec run = load_preset("synthetic_toy");
  const Dataset data = toy_data(run, 8);
  std::ostringstream log;
  PhaseOptions pre;
  pre.seed = 5;
  pre.epochs = 2;
  pre.log = &log;
  const PhaseResult a = run_phase(run, data, pre);
  pre.log = nullptr;
  const PhaseResult b = run_phase(run, data, pre);
  REQUIRE(a.epochs.size() == 2);
  CHECK(a.epochs[0].loss == b.epochs[0].loss);
  CHECK(a.epochs[1].loss == b.epochs[1].loss);
  CHECK(std::isfinite(a.epochs[1].loss));
  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);

  PhaseOptions probe;
  probe.phase = WorkflowPhase::kProbe;
  probe.seed = 5;
  probe.epochs = 1;
  probe.init = &a.params;
  probe.eval_data = &data;
  const PhaseResult q = run_phase(run, data, probe);
  CHECK(q.backbone_checksum_before == q.backbone_checksum_after);
  REQUIRE(q.eval);
  CHECK(q.eval->samples > 0);
  CHECK(q.eval->classification.top1 >= 0.0);
  CHECK(q.eval->classification.top1 <= 100.0);

  PhaseOptions orphan = probe;
  orphan.init = nullptr;
  CHECK_THROWS_AS(run_phase(run, data, orphan), ValidationError);
}
