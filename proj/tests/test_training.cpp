#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "pnpt/datagen.hpp"
#include "pnpt/dataset.hpp"
#include "pnpt/train.hpp"
#include "test_support.hpp"

using namespace pnpt;
using pnpt_test::TempDir;

namespace {

// Shared tiny corpus + backbone + pool; building them once keeps the suite
// fast and every case read-only on this state.
struct Corpus {
  TempDir dir{"training_corpus"};
  SynthSpec spec;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<NormalityPool> pool;

  Corpus() {
    spec = SynthSpec::defaults();
    spec.image_size = 64;
    spec.n_train = 2;
    spec.n_test_normal = 1;
    spec.n_test_anomalous = 1;
    spec.seed = 21;
    generate_dataset(spec, dir.path());
    backbone = std::make_unique<Backbone>(load_backbone(tiny_backbone_spec(64, 5)));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& item : list_train_images(dir.path())) pairs.emplace_back(item.class_id, item.path);
    pool = std::make_unique<NormalityPool>(build_pool(pairs, *backbone));
  }
};

Corpus& corpus() {
  static Corpus c;
  return c;
}

RunConfig tiny_run_config() {
  RunConfig rc;
  rc.backbone_name = "tiny";
  rc.backbone_seed = 5;
  rc.input_size = 64;
  rc.hidden_dim = 24;
  rc.heads = 2;
  rc.blocks = 1;
  rc.ff_expansion = 2;
  rc.semantic_count = 3;
  rc.epochs = 2;
  rc.batch_size = 4;
  rc.learning_rate = 1e-3;
  rc.seed = 9;
  rc.validate();
  return rc;
}

double max_param_diff(const TensorArchive& a, const TensorArchive& b) {
  double worst = 0.0;
  for (const auto& [name, ta] : a.tensors()) {
    if (name.rfind("opt/", 0) == 0 || name == "opt/t") continue;
    const Tensor& tb = b.get(name);
    REQUIRE(ta.shape() == tb.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) worst = std::max(worst, std::abs(ta[i] - tb[i]));
  }
  return worst;
}

std::vector<std::string> csv_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

TEST_CASE("adamw matches a hand-stepped reference") {
  ParameterStore ps;
  Parameter& w = ps.create("w", {2, 2}, true);
  Parameter& b = ps.create("b", {2}, false);
  w.value[0] = 0.5; w.value[1] = -0.3; w.value[2] = 1.2; w.value[3] = 0.0;
  b.value[0] = 0.1; b.value[1] = -0.2;

  const double lr = 1e-2, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamW opt(lr, wd, b1, b2, eps);
  opt.attach(ps);

  // Straight-line reference on plain arrays.
  std::vector<double> theta = {0.5, -0.3, 1.2, 0.0, 0.1, -0.2};
  std::vector<double> m(6, 0.0), v(6, 0.0);
  std::vector<bool> decays = {true, true, true, true, false, false};

  Rng rng(77);
  for (int t = 1; t <= 3; ++t) {
    std::vector<double> g(6);
    for (auto& x : g) x = rng.normal(0.0, 1.0);
    for (int i = 0; i < 4; ++i) w.grad[i] = g[static_cast<std::size_t>(i)];
    for (int i = 0; i < 2; ++i) b.grad[i] = g[static_cast<std::size_t>(4 + i)];

    for (int i = 0; i < 6; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * (mh / (std::sqrt(vh) + eps) + (decays[i] ? wd * theta[i] : 0.0));
    }
    opt.step(ps);
    CHECK(opt.steps_taken() == t);
    for (int i = 0; i < 4; ++i) CHECK(w.value[i] == doctest::Approx(theta[static_cast<std::size_t>(i)]).epsilon(1e-12));
    for (int i = 0; i < 2; ++i) CHECK(b.value[i] == doctest::Approx(theta[static_cast<std::size_t>(4 + i)]).epsilon(1e-12));
  }
}

TEST_CASE("weight decay is decoupled and skips non-decay parameters") {
  ParameterStore ps;
  Parameter& w = ps.create("w", {2}, true);
  Parameter& g = ps.create("norm.gamma", {2}, false);
  w.value[0] = 2.0; w.value[1] = -4.0;
  g.value[0] = 1.0; g.value[1] = 1.0;

  AdamW opt(0.1, 0.5);
  opt.attach(ps);
  opt.step(ps);  // zero gradients: the only force is decay

  CHECK(w.value[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-12));
  CHECK(w.value[1] == doctest::Approx(-4.0 - 0.1 * 0.5 * -4.0).epsilon(1e-12));
  CHECK(g.value[0] == 1.0);
  CHECK(g.value[1] == 1.0);
}

TEST_CASE("global norm clip") {
  ParameterStore ps;
  Parameter& a = ps.create("a", {2}, true);
  Parameter& b = ps.create("b", {1}, true);
  a.grad[0] = 3.0; a.grad[1] = 0.0; b.grad[0] = 4.0;  // norm 5

  SUBCASE("scales down to the cap") {
    const double pre = clip_global_norm(ps, 1.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.grad[0] == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
    CHECK(b.grad[0] == doctest::Approx(4.0 / 5.0).epsilon(1e-12));
  }
  SUBCASE("leaves small gradients alone") {
    clip_global_norm(ps, 10.0);
    CHECK(a.grad[0] == 3.0);
    CHECK(b.grad[0] == 4.0);
  }
  SUBCASE("non-positive cap disables clipping") {
    const double pre = clip_global_norm(ps, 0.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.grad[0] == 3.0);
  }
}

TEST_CASE("optimizer state survives an archive round trip") {
  ParameterStore ps;
  Parameter& w = ps.create("w", {3}, true);
  w.value[0] = 1.0; w.value[1] = -1.0; w.value[2] = 0.5;

  AdamW opt(1e-2, 1e-2);
  opt.attach(ps);
  Rng rng(31);
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < 3; ++i) w.grad[i] = rng.normal(0.0, 1.0);
    opt.step(ps);
  }
  TensorArchive arch;
  arch.meta()["kind"] = "checkpoint";
  opt.add_to_archive(arch);

  // Clone the parameter values, restore the state, and take the same third
  // step in both copies: they must agree bitwise.
  ParameterStore ps2;
  Parameter& w2 = ps2.create("w", {3}, true);
  w2.value = w.value;
  AdamW opt2(1e-2, 1e-2);
  opt2.attach(ps2);
  opt2.load_from_archive(arch, ps2);
  CHECK(opt2.steps_taken() == 2);

  for (int i = 0; i < 3; ++i) {
    w.grad[i] = 0.25 * (i + 1);
    w2.grad[i] = 0.25 * (i + 1);
  }
  opt.step(ps);
  opt2.step(ps2);
  CHECK(bitwise_equal(w.value, w2.value));
}

TEST_CASE("training runs, logs, and checkpoints") {
  Corpus& c = corpus();
  RunConfig rc = tiny_run_config();
  rc.epochs = 6;
  TempDir out("training_run");

  TrainResult res = train(rc, c.dir.path(), *c.backbone, *c.pool, out.path());

  // 6 train images, batch 4 -> 2 steps per epoch.
  const int spe = 2;
  CHECK(res.global_step == static_cast<std::int64_t>(rc.epochs) * spe);
  CHECK(res.epochs_completed == rc.epochs);
  CHECK(res.checkpoint_path == out.path() + "/checkpoint.pnpt");
  REQUIRE(res.step_losses.size() == static_cast<std::size_t>(rc.epochs * spe));
  for (double l : res.step_losses) CHECK(std::isfinite(l));

  // The optimizer makes progress on this tiny corpus.
  const double first = (res.step_losses[0] + res.step_losses[1]) / 2.0;
  const double last = (res.step_losses[10] + res.step_losses[11]) / 2.0;
  CHECK(last < first);

  auto lines = csv_lines(out.path() + "/loss.csv");
  REQUIRE(lines.size() == 1 + res.step_losses.size());
  CHECK(lines[0] == "step,epoch,loss");
  int step = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream row(lines[i]);
    std::string s, e, l;
    REQUIRE(std::getline(row, s, ','));
    REQUIRE(std::getline(row, e, ','));
    REQUIRE(std::getline(row, l, ','));
    CHECK(std::stoi(s) == step);
    CHECK(std::stoi(e) == step / spe);
    CHECK(std::stod(l) == doctest::Approx(res.step_losses[i - 1]).epsilon(1e-9));
    ++step;
  }

  // The checkpoint reproduces the trained model parameters exactly.
  LoadedCheckpoint ck = load_checkpoint(res.checkpoint_path);
  CHECK(ck.epoch_next == rc.epochs);
  CHECK(ck.global_step == res.global_step);
  CHECK(ck.pool_tag == pool_tag(*c.pool));
  PNPTModel restored = model_from_checkpoint(ck);
  TensorArchive direct;
  restored.add_to_archive(direct);
  for (const auto& [name, t] : direct.tensors()) CHECK(bitwise_equal(t, ck.archive.get(name)));
}

TEST_CASE("the backbone stays frozen through training") {
  Corpus& c = corpus();
  Tensor probe({3, 64, 64});
  Rng rng(1);
  for (std::int64_t i = 0; i < probe.numel(); ++i) probe[i] = rng.uniform();
  MultiScaleFeatureSet before = c.backbone->extract_features(probe);
  const std::string fp_before = c.backbone->fingerprint();

  RunConfig rc = tiny_run_config();
  TempDir out("training_frozen");
  train(rc, c.dir.path(), *c.backbone, *c.pool, out.path());

  MultiScaleFeatureSet after = c.backbone->extract_features(probe);
  CHECK(c.backbone->fingerprint() == fp_before);
  REQUIRE(after.scales.size() == before.scales.size());
  for (std::size_t i = 0; i < before.scales.size(); ++i) CHECK(bitwise_equal(before.scales[i], after.scales[i]));
}

TEST_CASE("max_steps caps the run") {
  Corpus& c = corpus();
  RunConfig rc = tiny_run_config();
  rc.max_steps = 3;
  TempDir out("training_cap");
  TrainResult res = train(rc, c.dir.path(), *c.backbone, *c.pool, out.path());
  CHECK(res.global_step == 3);
  CHECK(res.step_losses.size() == 3);
  CHECK(res.epochs_completed == 1);  // 3 of 4 steps -> one full epoch
}

TEST_CASE("interrupted training resumes to the exact same trajectory") {
  Corpus& c = corpus();
  RunConfig rc = tiny_run_config();
  rc.epochs = 4;  // 8 steps total

  TempDir full_out("training_full");
  TrainResult full = train(rc, c.dir.path(), *c.backbone, *c.pool, full_out.path());

  // Stop mid-epoch (3 of 8 steps), then resume to completion in place.
  RunConfig capped = rc;
  capped.max_steps = 3;
  TempDir resumed_out("training_resumed");
  TrainResult part = train(capped, c.dir.path(), *c.backbone, *c.pool, resumed_out.path());
  CHECK(part.global_step == 3);

  TrainResult rest = resume_training(resumed_out.path() + "/checkpoint.pnpt", c.dir.path(),
                                     *c.backbone, *c.pool, resumed_out.path(), &rc);
  CHECK(rest.global_step == full.global_step);
  CHECK(rest.epochs_completed == rc.epochs);
  REQUIRE(rest.step_losses.size() == 5);

  // Loss trajectory: the resumed tail equals the uninterrupted run's tail.
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rest.step_losses[i] == doctest::Approx(full.step_losses[3 + i]).epsilon(1e-9));
  }

  // Final parameters match within the pinned resume tolerance (and in fact
  // replay bitwise: every source of randomness is stateless).
  LoadedCheckpoint ck_full = load_checkpoint(full_out.path() + "/checkpoint.pnpt");
  LoadedCheckpoint ck_resumed = load_checkpoint(resumed_out.path() + "/checkpoint.pnpt");
  CHECK(max_param_diff(ck_full.archive, ck_resumed.archive) <= 1e-5);
  for (const auto& [name, t] : ck_full.archive.tensors()) {
    if (name.rfind("opt/", 0) == 0) continue;
    CHECK(bitwise_equal(t, ck_resumed.archive.get(name)));
  }

  // loss.csv accumulates across the interruption: header + 3 + 5 rows with
  // contiguous step numbers.
  auto lines = csv_lines(resumed_out.path() + "/loss.csv");
  REQUIRE(lines.size() == 9);
  for (int i = 1; i <= 8; ++i) CHECK(lines[static_cast<std::size_t>(i)].rfind(std::to_string(i - 1) + ",", 0) == 0);

  // Resuming a finished run is a no-op.
  TrainResult again = resume_training(resumed_out.path() + "/checkpoint.pnpt", c.dir.path(),
                                      *c.backbone, *c.pool, resumed_out.path(), &rc);
  CHECK(again.step_losses.empty());
  CHECK(again.global_step == full.global_step);
}

TEST_CASE("resume refuses a different configuration or pool") {
  Corpus& c = corpus();
  RunConfig rc = tiny_run_config();
  rc.max_steps = 1;
  TempDir out("training_guard");
  train(rc, c.dir.path(), *c.backbone, *c.pool, out.path());
  const std::string ck = out.path() + "/checkpoint.pnpt";

  RunConfig other = rc;
  other.hidden_dim = 36;
  CHECK_THROWS_WITH_AS(resume_training(ck, c.dir.path(), *c.backbone, *c.pool, out.path(), &other),
                       doctest::Contains("different configuration"), std::runtime_error);

  // A pool missing one class carries a different tag.
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& item : list_train_images(c.dir.path())) {
    if (item.class_id != "dots") pairs.emplace_back(item.class_id, item.path);
  }
  NormalityPool smaller = build_pool(pairs, *c.backbone);
  CHECK(pool_tag(smaller) != pool_tag(*c.pool));
  CHECK_THROWS_WITH_AS(resume_training(ck, c.dir.path(), *c.backbone, smaller, out.path(), &rc),
                       doctest::Contains("different pool"), std::runtime_error);

  // Operational knobs are not part of the hash: changing max_steps is fine.
  RunConfig operational = rc;
  operational.max_steps = 0;
  CHECK_NOTHROW(resume_training(ck, c.dir.path(), *c.backbone, *c.pool, out.path(), &operational));
}

TEST_CASE("checkpoint loading rejects foreign archives") {
  TempDir dir("training_reject");
  TensorArchive junk;
  junk.meta()["kind"] = "pool";
  junk.add("x", Tensor({1}));
  junk.save(dir.file("junk.pnpt"));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("junk.pnpt")), doctest::Contains("not a checkpoint"), std::runtime_error);
}

TEST_CASE("worker count respects the environment") {
  ::setenv("PNPT_NUM_WORKERS", "1", 1);
  CHECK(num_workers() == 1);
  ::setenv("PNPT_NUM_WORKERS", "bogus", 1);
  CHECK_THROWS_AS(num_workers(), std::invalid_argument);
  ::unsetenv("PNPT_NUM_WORKERS");
  CHECK(num_workers() >= 1);
}
