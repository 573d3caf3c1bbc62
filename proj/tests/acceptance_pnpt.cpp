// Acceptance gate: nine end-to-end checks on the complete pipeline at desk
// scale. Everything runs from scratch in a temp directory: synthetic corpus
// (generator defaults), pool construction, five trainings (full model plus
// four ablation variants), evaluation, diagnostics, and numeric oracles.
// Prints one "ACCEPTANCE <n> PASS|FAIL" line per criterion and exits nonzero
// if any fail.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pnpt/archive.hpp"
#include "pnpt/backbone.hpp"
#include "pnpt/config.hpp"
#include "pnpt/datagen.hpp"
#include "pnpt/dataset.hpp"
#include "pnpt/eval.hpp"
#include "pnpt/hpe.hpp"
#include "pnpt/image.hpp"
#include "pnpt/model.hpp"
#include "pnpt/nn.hpp"
#include "pnpt/objective.hpp"
#include "pnpt/pool.hpp"
#include "pnpt/rng.hpp"
#include "pnpt/tensor.hpp"
#include "pnpt/train.hpp"

#include "test_support.hpp"

namespace {

using namespace pnpt;
using pnpt_test::TempDir;
using pnpt_test::random_tensor;

// ---- Thresholds. Every tolerance the gate enforces lives here. ----

constexpr double kImageAurocMin = 0.90;   // criterion 2
constexpr double kPixelAurocMin = 0.85;   // criterion 2
constexpr double kTrainBudgetSec = 600.0; // criterion 2: CPU <= 10 min
constexpr double kDefectRatioMin = 2.0;   // criterion 3
constexpr double kFullVsAMargin = 0.03;   // criterion 3
constexpr double kSwapFracMin = 0.90;     // criterion 5
constexpr double kDriftFactor = 0.5;      // criterion 5
constexpr int kRetrievalTrials = 1000;    // criterion 6
constexpr double kHeldOutAccMin = 0.99;   // criterion 6
constexpr double kBenchNRatioLo = 0.80;   // criterion 6: latency vs train count
constexpr double kBenchNRatioHi = 1.25;
// "Latency roughly linear in class count": 10x the classes must land within
// [4x, 25x] the latency (per-query overhead makes small pools sub-linear).
constexpr double kBenchKRatioLo = 4.0;
constexpr double kBenchKRatioHi = 25.0;
constexpr double kFdRelTol = 1e-4;        // criterion 7
constexpr double kFdAbsFloor = 1e-8;      // below this both sides count as zero
constexpr double kAttnRowTol = 1e-6;      // criterion 7
constexpr double kLossIdentityTol = 1e-6; // criterion 7
constexpr double kHpeRoundTripTol = 1e-6; // criterion 8
constexpr double kResumeLossTol = 1e-5;   // criterion 8
constexpr int kAurocTrials = 200;         // criterion 9

// The pinned desk configuration: tiny backbone, C=96, N=8, M=2, 30 epochs.
// Fusion weights and the score reduction are scoring-time calibrations; they
// never enter the training loss.
RunConfig desk_run_config() {
  RunConfig rc;
  rc.backbone_name = "tiny";
  rc.backbone_seed = 0;
  rc.input_size = 128;
  rc.hidden_dim = 96;
  rc.patch_sizes = {4, 2, 1};
  rc.noise_std = 0.1;
  rc.heads = 8;
  rc.blocks = 2;
  rc.ff_expansion = 4;
  rc.semantic_count = 8;
  rc.fusion.w_prior = 0.1;
  rc.fusion.w_self = 0.9;
  rc.epochs = 30;
  rc.batch_size = 1;
  rc.learning_rate = 5e-4;
  rc.weight_decay = 1e-4;
  rc.grad_clip = 1.0;
  rc.seed = 7;
  rc.score.smooth_sigma = 2.0;
  rc.score.reduction = ScoreReduction::mean_top_k;
  rc.score.top_k_frac = 0.05;
  rc.validate();
  return rc;
}

// ---- Reporting. ----

struct Criterion {
  bool pass = true;
  bool ran = false;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    ran = true;
    notes.push_back(std::string(ok ? "ok: " : "FAIL: ") + what);
    if (!ok) pass = false;
  }
  void note(const std::string& s) {
    ran = true;
    notes.push_back(s);
  }
  void fail(const std::string& s) {
    ran = true;
    pass = false;
    notes.push_back("FAIL: " + s);
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string stem_of(const std::string& rel) {
  const auto dot = rel.rfind('.');
  return dot == std::string::npos ? rel : rel.substr(0, dot);
}

// ---- Training plumbing. ----

struct TrainedVariant {
  RunConfig rc;
  std::string dir;
  TrainResult result;
  double wall_seconds = 0.0;
};

TrainedVariant train_variant(RunConfig rc, const std::string& data_root, const std::string& pool_path,
                             const std::string& out_dir) {
  // Each worker loads its own backbone/pool so concurrent trainings share
  // nothing mutable.
  const Backbone backbone = load_backbone(rc.backbone_spec());
  const NormalityPool pool = load_pool(pool_path);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(rc, data_root, backbone, pool, out_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return TrainedVariant{std::move(rc), out_dir, std::move(r), secs};
}

double central_fd(Parameter* p, std::int64_t i, const std::function<double()>& fwd, double h = 1e-6) {
  const double keep = p->value[i];
  p->value[i] = keep + h;
  const double up = fwd();
  p->value[i] = keep - h;
  const double dn = fwd();
  p->value[i] = keep;
  return (up - dn) / (2.0 * h);
}

// Checks every parameter of a store against finite differences of fwd.
// Samples at most four coordinates per tensor; returns the max relative
// error over coordinates where either side is above the zero floor.
double fd_check_store(ParameterStore& ps, const std::function<double()>& fwd,
                      const std::function<void(ParameterStore&)>& backward_fill) {
  ps.zero_grads();
  backward_fill(ps);
  double worst = 0.0;
  for (Parameter* p : ps.all()) {
    const std::int64_t n = p->value.numel();
    const std::int64_t stride = std::max<std::int64_t>(1, n / 4);
    for (std::int64_t i = 0; i < n; i += stride) {
      const double fd = central_fd(p, i, fwd);
      const double got = p->grad[i];
      if (std::max(std::abs(fd), std::abs(got)) < kFdAbsFloor) continue;
      worst = std::max(worst, pnpt_test::rel_err(got, fd));
    }
  }
  return worst;
}

struct AttnParamsBundle {
  ParameterStore ps;
  Rng rng{31};
  int dim, heads;
  AttnParamsBundle(int d, int h) : dim(d), heads(h) {}
  SaceParams sace(const std::string& prefix) {
    SaceParams p;
    p.sam = make_attention(ps, prefix + ".sam", dim, heads, rng);
    p.ln1 = make_layer_norm(ps, prefix + ".ln1", dim);
    p.fp = make_feed_forward(ps, prefix + ".fp", dim, 4, rng);
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", dim);
    return p;
  }
  FusionParams fusion(const std::string& prefix) {
    FusionParams p;
    p.cam1 = make_attention(ps, prefix + ".cam1", dim, heads, rng);
    p.ln1 = make_layer_norm(ps, prefix + ".ln1", dim);
    p.cam2 = make_attention(ps, prefix + ".cam2", dim, heads, rng);
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", dim);
    p.fp = make_feed_forward(ps, prefix + ".fp", dim, 4, rng);
    p.ln3 = make_layer_norm(ps, prefix + ".ln3", dim);
    return p;
  }
  CscdParams cscd(const std::string& prefix) {
    CscdParams p;
    p.cam = make_attention(ps, prefix + ".cam", dim, heads, rng);
    p.ln1 = make_layer_norm(ps, prefix + ".ln1", dim);
    p.fp = make_feed_forward(ps, prefix + ".fp", dim, 4, rng);
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", dim);
    return p;
  }
};

void set_identity(const LinearParams& lin) {
  Tensor& w = lin.w->value;
  w.fill(0.0);
  for (int i = 0; i < w.dim(0); ++i) w[static_cast<std::int64_t>(i) * w.dim(1) + i] = 1.0;
  lin.b->value.fill(0.0);
}

// O(P*N) pairwise AUROC oracle (exact, long double accumulation).
double pairwise_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  long double wins = 0.0L;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0L;
      else if (scores[i] == scores[j]) wins += 0.5L;
    }
  }
  return static_cast<double>(wins / static_cast<long double>(pairs));
}

}  // namespace

int main() {
  const auto suite_start = std::chrono::steady_clock::now();
  std::array<Criterion, 10> cr;  // 1-indexed

  try {
    TempDir tmp("acceptance");
    const std::string root = tmp.file("corpus");
    const std::string pool_path = tmp.file("pool.pnpt");

    // ---- Shared setup: default synthetic corpus, backbone, pool. ----
    const SynthSpec spec = SynthSpec::defaults();
    generate_dataset(spec, root);
    const RunConfig rc_full = desk_run_config();
    const Backbone backbone = load_backbone(rc_full.backbone_spec());

    {
      std::vector<std::pair<std::string, std::string>> pairs;
      for (const TrainItem& it : list_train_images(root)) pairs.emplace_back(it.class_id, it.path);
      const NormalityPool pool = build_pool(pairs, backbone, rc_full.pool_metric, rc_full.normalize_codings);
      save_pool(pool, pool_path);
    }
    const NormalityPool pool = load_pool(pool_path);

    // ---- Five trainings: full model plus ablations, concurrently. ----
    // (A) plain single-stream transformer: no pool, no semantic tokens, no
    // cross-attention decode. (C) no pool. (D) no semantic tokens. (E) no
    // cross-attention decode.
    RunConfig rc_a = rc_full;
    rc_a.ablation.disable_pool = true;
    rc_a.ablation.disable_semantic_tokens = true;
    rc_a.ablation.disable_cscd = true;
    RunConfig rc_c = rc_full;
    rc_c.ablation.disable_pool = true;
    RunConfig rc_d = rc_full;
    rc_d.ablation.disable_semantic_tokens = true;
    RunConfig rc_e = rc_full;
    rc_e.ablation.disable_cscd = true;

    auto fut_full = std::async(std::launch::async, train_variant, rc_full, root, pool_path, tmp.file("run_full"));
    auto fut_a = std::async(std::launch::async, train_variant, rc_a, root, pool_path, tmp.file("run_a"));
    auto fut_c = std::async(std::launch::async, train_variant, rc_c, root, pool_path, tmp.file("run_c"));
    auto fut_d = std::async(std::launch::async, train_variant, rc_d, root, pool_path, tmp.file("run_d"));
    auto fut_e = std::async(std::launch::async, train_variant, rc_e, root, pool_path, tmp.file("run_e"));
    TrainedVariant tv_full = fut_full.get();
    TrainedVariant tv_a = fut_a.get();
    TrainedVariant tv_c = fut_c.get();
    TrainedVariant tv_d = fut_d.get();
    TrainedVariant tv_e = fut_e.get();

    // ---- Evaluations. ----
    const std::string maps_dir = tmp.file("maps_full");
    LoadedCheckpoint ck_full = load_checkpoint(tv_full.dir + "/checkpoint.pnpt");
    PNPTModel model_full = model_from_checkpoint(ck_full);
    EvalOptions full_opts;
    full_opts.maps_dir = maps_dir;
    const EvalReport rep_full = evaluate_dataset(rc_full, root, backbone, pool, model_full, full_opts);

    auto eval_variant = [&](const TrainedVariant& tv) {
      LoadedCheckpoint ck = load_checkpoint(tv.dir + "/checkpoint.pnpt");
      PNPTModel model = model_from_checkpoint(ck);
      return evaluate_dataset(tv.rc, root, backbone, pool, model);
    };
    const EvalReport rep_a = eval_variant(tv_a);
    const EvalReport rep_c = eval_variant(tv_c);
    const EvalReport rep_d = eval_variant(tv_d);
    const EvalReport rep_e = eval_variant(tv_e);

    // ---- Criterion 1: full-scale results are documentation, not a gate. ----
    {
      Criterion& c = cr[1];
      c.note("full-scale MVTec AD scores need the real dataset, pretrained wide-residual "
             "weights, and GPU-scale compute; they are out of scope for this gate");
      const std::string readme_path = std::string(PNPT_REPO_ROOT) + "/README.md";
      std::ifstream in(readme_path);
      std::stringstream ss;
      ss << in.rdbuf();
      const std::string readme = ss.str();
      c.check(in.good() || !readme.empty(), "README.md present at repo root");
      auto lower = readme;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
      c.check(readme.find("wide-residual-50-style") != std::string::npos &&
                  lower.find("reproduc") != std::string::npos,
              "README documents the full-scale reproduction recipe");
    }

    // ---- Criterion 2: desk-scale AUROC thresholds within the CPU budget. ----
    {
      Criterion& c = cr[2];
      c.check(rc_full.hidden_dim == 96 && rc_full.semantic_count == 8 && rc_full.blocks == 2 &&
                  rc_full.backbone_name == "tiny" && rc_full.epochs <= 30,
              "pinned config: tiny backbone, C=96, N=8, M=2, epochs=" + std::to_string(rc_full.epochs));
      c.check(tv_full.wall_seconds <= kTrainBudgetSec,
              "training wall time " + fmt(tv_full.wall_seconds, 1) + "s <= " + fmt(kTrainBudgetSec, 0) + "s");
      c.check(rep_full.mean_image_auroc >= kImageAurocMin,
              "mean image AUROC " + fmt(rep_full.mean_image_auroc) + " >= " + fmt(kImageAurocMin, 2));
      c.check(rep_full.mean_pixel_auroc >= kPixelAurocMin,
              "mean pixel AUROC " + fmt(rep_full.mean_pixel_auroc) + " >= " + fmt(kPixelAurocMin, 2));
      for (const ClassEval& ce : rep_full.per_class)
        c.note(ce.class_id + ": image " + fmt(ce.image_auroc) + ", pixel " + fmt(ce.pixel_auroc));
    }

    // ---- Criterion 3: no identical mapping. ----
    {
      Criterion& c = cr[3];
      // (a) anomaly mass concentrates on defect pixels.
      double defect_sum = 0.0, normal_sum = 0.0;
      std::int64_t defect_n = 0, normal_n = 0;
      for (const TestItem& item : list_test_images(root)) {
        const TensorArchive raw = TensorArchive::load(maps_dir + "/" + stem_of(item.rel_path) + "_raw.pnpt");
        const Tensor& map = raw.get("pixel_map");
        if (item.anomalous) {
          Tensor mask = load_mask(item.mask_path);
          if (mask.dim(0) != map.dim(0) || mask.dim(1) != map.dim(1))
            mask = resize_map_nearest(mask, map.dim(0), map.dim(1));
          for (std::int64_t i = 0; i < map.numel(); ++i) {
            if (mask[i] > 0.5) {
              defect_sum += map[i];
              ++defect_n;
            } else {
              normal_sum += map[i];
              ++normal_n;
            }
          }
        } else {
          for (std::int64_t i = 0; i < map.numel(); ++i) normal_sum += map[i];
          normal_n += map.numel();
        }
      }
      c.check(defect_n > 0 && normal_n > 0, "both pixel populations are non-empty");
      const double ratio = (defect_sum / static_cast<double>(defect_n)) /
                           (normal_sum / static_cast<double>(normal_n));
      c.check(ratio >= kDefectRatioMin,
              "defect-pixel mean score is " + fmt(ratio, 3) + "x the normal-pixel mean (need >= " +
                  fmt(kDefectRatioMin, 1) + "x)");
      // (b) the dual-stream model beats the plain single-stream transformer.
      c.check(rep_full.mean_image_auroc >= rep_a.mean_image_auroc + kFullVsAMargin,
              "full image AUROC " + fmt(rep_full.mean_image_auroc) + " >= plain transformer (A) " +
                  fmt(rep_a.mean_image_auroc) + " + " + fmt(kFullVsAMargin, 2));
    }

    // ---- Criterion 4: ablation ordering. ----
    {
      Criterion& c = cr[4];
      c.check(rep_c.mean_image_auroc < rep_full.mean_image_auroc,
              "(C) no pool: " + fmt(rep_c.mean_image_auroc) + " < full " + fmt(rep_full.mean_image_auroc));
      c.check(rep_d.mean_image_auroc < rep_full.mean_image_auroc,
              "(D) no semantic tokens: " + fmt(rep_d.mean_image_auroc) + " < full " +
                  fmt(rep_full.mean_image_auroc));
      c.check(rep_e.mean_image_auroc < rep_full.mean_image_auroc,
              "(E) no cross-attention decode: " + fmt(rep_e.mean_image_auroc) + " < full " +
                  fmt(rep_full.mean_image_auroc));
    }

    // ---- Criterion 5: prompt-swap diagnostic. ----
    {
      Criterion& c = cr[5];
      const PromptSwapReport swap = prompt_swap_diagnostic(rc_full, root, backbone, pool, model_full);
      c.check(swap.frac_forced_larger >= kSwapFracMin,
              "d_forced > d_correct on " + fmt(100.0 * swap.frac_forced_larger, 1) + "% of images (need >= " +
                  fmt(100.0 * kSwapFracMin, 0) + "%)");
      c.check(swap.mean_self_drift < kDriftFactor * swap.mean_prior_change,
              "self drift " + fmt(swap.mean_self_drift, 6) + " < " + fmt(kDriftFactor, 1) +
                  " * prior change " + fmt(swap.mean_prior_change, 6));
      c.note("mean d_correct " + fmt(swap.mean_d_correct) + ", mean d_forced " + fmt(swap.mean_d_forced));
    }

    // ---- Criterion 6: retrieval correctness and latency scaling. ----
    {
      Criterion& c = cr[6];
      Rng rng(4242);
      int mismatches = 0;
      for (int trial = 0; trial < kRetrievalTrials; ++trial) {
        const int k = rng.uniform_int(1, 16);
        const int dim = rng.uniform_int(2, 32);
        NormalityPool synth;
        synth.metric = (trial % 2 == 0) ? PoolMetric::euclidean : PoolMetric::cosine;
        synth.normalize_codings = false;
        for (int i = 0; i < k; ++i) {
          synth.classes.push_back("c" + std::to_string(i));
          synth.prototype_codings.push_back({random_tensor({dim}, rng)});
          synth.prototype_features.emplace_back();
          synth.sample_counts.push_back(1);
        }
        GlobalCoding query{random_tensor({dim}, rng)};
        if (trial % 7 == 0 && k >= 2) {
          // Exact tie: two identical prototypes equal to the query; the
          // contract breaks ties toward the lower class index.
          const int a = rng.uniform_int(0, k - 2);
          synth.prototype_codings[static_cast<std::size_t>(a) + 1] = synth.prototype_codings[static_cast<std::size_t>(a)];
          query.vector = synth.prototype_codings[static_cast<std::size_t>(a)].vector;
        }
        int best = -1;
        double best_d = 0.0;
        for (int i = 0; i < k; ++i) {
          const double d = coding_distance(query.vector, synth.prototype_codings[static_cast<std::size_t>(i)].vector,
                                           synth.metric);
          if (best < 0 || d < best_d) {
            best = i;
            best_d = d;
          }
        }
        if (retrieve_prior(query, synth).class_index != best) ++mismatches;
      }
      c.check(mismatches == 0, "nearest-coding retrieval equals the brute-force oracle on " +
                                   std::to_string(kRetrievalTrials) + " random instances (" +
                                   std::to_string(mismatches) + " mismatches)");
      c.check(rep_full.retrieval_accuracy >= kHeldOutAccMin,
              "held-out retrieval accuracy " + fmt(rep_full.retrieval_accuracy) + " >= " + fmt(kHeldOutAccMin, 2));

      const std::vector<BenchRow> rows = bench_retrieval({4, 40}, {100, 1000}, 112, 99);
      auto lat = [&](int k, int n) -> double {
        for (const BenchRow& r : rows)
          if (r.num_classes == k && r.train_images == n) return r.mean_latency_ns;
        throw std::logic_error("bench row missing");
      };
      for (int k : {4, 40}) {
        const double ratio = lat(k, 1000) / lat(k, 100);
        c.check(ratio >= kBenchNRatioLo && ratio <= kBenchNRatioHi,
                "K=" + std::to_string(k) + ": latency ratio N=1000/N=100 is " + fmt(ratio, 3) + " (need " +
                    fmt(kBenchNRatioLo, 2) + "..=" + fmt(kBenchNRatioHi, 2) + ")");
      }
      for (int n : {100, 1000}) {
        const double ratio = lat(40, n) / lat(4, n);
        c.check(ratio >= kBenchKRatioLo && ratio <= kBenchKRatioHi,
                "N=" + std::to_string(n) + ": latency ratio K=40/K=4 is " + fmt(ratio, 2) +
                    " for 10x the classes (need " + fmt(kBenchKRatioLo, 0) + "..=" + fmt(kBenchKRatioHi, 0) + ")");
      }
    }

    // ---- Criterion 7: gradients, attention rows, loss identities. ----
    {
      Criterion& c = cr[7];
      // (a) reconstruction loss vs finite differences.
      {
        Rng rng(11);
        const std::vector<Tensor> inputs = {random_tensor({2, 3, 3}, rng), random_tensor({3, 2, 2}, rng)};
        ParameterStore ps;
        Parameter& rp0 = ps.create("rp0", {2, 3, 3});
        Parameter& rp1 = ps.create("rp1", {3, 2, 2});
        Parameter& rs0 = ps.create("rs0", {2, 3, 3});
        Parameter& rs1 = ps.create("rs1", {3, 2, 2});
        for (Parameter* p : ps.all())
          for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = rng.normal();
        auto fwd = [&]() {
          Tape t;
          std::vector<Var> in = {t.constant(inputs[0]), t.constant(inputs[1])};
          std::vector<Var> rp = {t.param(rp0), t.param(rp1)};
          std::vector<Var> rs = {t.param(rs0), t.param(rs1)};
          return t.value(reconstruction_loss_tape(t, in, rp, rs))[0];
        };
        const double worst = fd_check_store(ps, fwd, [&](ParameterStore&) {
          Tape t;
          std::vector<Var> in = {t.constant(inputs[0]), t.constant(inputs[1])};
          std::vector<Var> rp = {t.param(rp0), t.param(rp1)};
          std::vector<Var> rs = {t.param(rs0), t.param(rs1)};
          t.backward(reconstruction_loss_tape(t, in, rp, rs));
        });
        c.check(worst < kFdRelTol, "loss gradient max relative FD error " + fmt(worst, 8));
      }
      // (b) one aggregation + decode stage end to end.
      {
        AttnParamsBundle b(8, 2);
        SaceParams sp = b.sace("s");
        CscdParams cp = b.cscd("c");
        Parameter& tok = b.ps.create("tok", {5, 8});
        Parameter& sem = b.ps.create("sem", {2, 8});
        for (std::int64_t i = 0; i < tok.value.numel(); ++i) tok.value[i] = b.rng.normal(0.0, 0.5);
        for (std::int64_t i = 0; i < sem.value.numel(); ++i) sem.value[i] = b.rng.normal(0.0, 0.5);
        const Tensor target = random_tensor({5, 8}, b.rng);
        auto graph = [&](Tape& t) {
          SaceOut r = sace_aggregate(t, t.param(tok), t.param(sem), sp);
          Var dec = cscd_decode(t, r.patch, r.semantic, cp);
          return cosine_distance_flat(t, dec, t.constant(target));
        };
        auto fwd = [&]() {
          Tape t;
          return t.value(graph(t))[0];
        };
        const double worst = fd_check_store(b.ps, fwd, [&](ParameterStore&) {
          Tape t;
          t.backward(graph(t));
        });
        c.check(worst < kFdRelTol, "aggregation+decode gradient max relative FD error " + fmt(worst, 8));
      }
      // (c) patch-embedding projections.
      {
        Rng rng(23);
        HPEConfig cfg = make_hpe_config({4, 8}, {8, 4}, {2, 1}, 12, 0.0);
        ParameterStore ps;
        HPEParams params = make_hpe_params(ps, cfg, rng);
        const HPEPlan plan = make_hpe_plan(cfg);
        const std::vector<Tensor> feats = {random_tensor({4, 8, 8}, rng), random_tensor({8, 4, 4}, rng)};
        const std::vector<Tensor> targets = {random_tensor({4, 64}, rng), random_tensor({8, 16}, rng)};
        auto graph = [&](Tape& t) {
          Var tokens = hpe_forward(t, {t.constant(feats[0]), t.constant(feats[1])}, params, cfg, plan, false, nullptr);
          std::vector<Var> inv = hpe_inverse(t, tokens, params, cfg, plan);
          Var loss = cosine_distance_flat(t, inv[0], t.constant(targets[0]));
          return t.add(loss, cosine_distance_flat(t, inv[1], t.constant(targets[1])));
        };
        auto fwd = [&]() {
          Tape t;
          return t.value(graph(t))[0];
        };
        const double worst = fd_check_store(ps, fwd, [&](ParameterStore&) {
          Tape t;
          t.backward(graph(t));
        });
        c.check(worst < kFdRelTol, "patch-embedding gradient max relative FD error " + fmt(worst, 8));
      }
      // (d) every attention softmax row sums to one.
      {
        AttnParamsBundle b(24, 4);
        SaceParams sp = b.sace("s");
        FusionParams fp = b.fusion("f");
        CscdParams cp = b.cscd("c");
        Tensor patch = random_tensor({12, 24}, b.rng);
        Tensor sem = random_tensor({4, 24}, b.rng);
        Tensor other = random_tensor({4, 24}, b.rng);
        std::vector<Tensor> traces;
        Tape t;
        SaceOut r = sace_aggregate(t, t.input(patch), t.input(sem), sp, &traces);
        Var fused = semantic_alignment_fusion(t, t.input(other), r.semantic, fp, &traces);
        cscd_decode(t, r.patch, fused, cp, &traces);
        double worst = 0.0;
        std::int64_t rows_seen = 0;
        for (const Tensor& m : traces) {
          for (int i = 0; i < m.dim(0); ++i) {
            double s = 0.0;
            for (int j = 0; j < m.dim(1); ++j) s += m.at2(i, j);
            worst = std::max(worst, std::abs(s - 1.0));
            ++rows_seen;
          }
        }
        c.check(rows_seen > 0 && worst < kAttnRowTol,
                "all " + std::to_string(rows_seen) + " attention rows sum to 1 (max deviation " + fmt(worst, 9) + ")");
      }
      // (e) loss identities: 0 / 2H / 4H for perfect, orthogonal, anti-parallel.
      {
        Rng rng(37);
        const std::vector<std::vector<int>> shapes = {{2, 3, 3}, {3, 2, 2}, {4, 2, 1}};
        const int h = static_cast<int>(shapes.size());
        MultiScaleFeatureSet input, ortho, anti;
        input.provenance = Provenance::input;
        for (const auto& s : shapes) {
          Tensor x(s), o(s);
          const std::int64_t half = x.numel() / 2;
          for (std::int64_t i = 0; i < half; ++i) x[i] = rng.normal(0.0, 1.0) + 3.0;
          for (std::int64_t i = half; i < x.numel(); ++i) o[i] = rng.normal(0.0, 1.0) + 3.0;
          input.scales.push_back(x);
          ortho.scales.push_back(o);
          Tensor a(s);
          for (std::int64_t i = 0; i < x.numel(); ++i) a[i] = -x[i];
          anti.scales.push_back(a);
        }
        const double perfect = reconstruction_loss_value(input, &input, input);
        const double orthogonal = reconstruction_loss_value(input, &ortho, ortho);
        const double anti_parallel = reconstruction_loss_value(input, &anti, anti);
        c.check(std::abs(perfect) < kLossIdentityTol, "perfect reconstruction: loss " + fmt(perfect, 10));
        c.check(std::abs(orthogonal - 2.0 * h) < kLossIdentityTol,
                "orthogonal reconstruction: loss " + fmt(orthogonal, 10) + " vs 2H = " + fmt(2.0 * h, 1));
        c.check(std::abs(anti_parallel - 4.0 * h) < kLossIdentityTol,
                "anti-parallel reconstruction: loss " + fmt(anti_parallel, 10) + " vs 4H = " + fmt(4.0 * h, 1));
      }
    }

    // ---- Criterion 8: round-trips. ----
    {
      Criterion& c = cr[8];
      // (a) identity-configured patch embedding round-trips features.
      {
        Rng rng(7);
        HPEConfig cfg = make_hpe_config({6}, {4}, {1}, 6, 0.0);
        ParameterStore ps;
        HPEParams params = make_hpe_params(ps, cfg, rng);
        set_identity(params.proj_fwd[0]);
        set_identity(params.proj_inv[0]);
        const HPEPlan plan = make_hpe_plan(cfg);
        const Tensor f = random_tensor({6, 4, 4}, rng);
        Tape t;
        Var tokens = hpe_forward(t, {t.input(f)}, params, cfg, plan, false, nullptr);
        const std::vector<Var> inv = hpe_inverse(t, tokens, params, cfg, plan);
        const double diff = max_abs_diff(t.value(inv[0]), f.reshaped({6, 16}));
        c.check(diff <= kHpeRoundTripTol, "identity round-trip max deviation " + fmt(diff, 9));
      }
      // (b) pool save/load is bitwise.
      {
        const NormalityPool re = load_pool(pool_path);
        bool same = re.classes == pool.classes && re.metric == pool.metric &&
                    re.normalize_codings == pool.normalize_codings &&
                    re.backbone_fingerprint == pool.backbone_fingerprint && re.sample_counts == pool.sample_counts;
        for (int i = 0; same && i < pool.num_classes(); ++i) {
          same = bitwise_equal(re.prototype_codings[static_cast<std::size_t>(i)].vector,
                               pool.prototype_codings[static_cast<std::size_t>(i)].vector);
          const auto& fa = re.prototype_features[static_cast<std::size_t>(i)].scales;
          const auto& fb = pool.prototype_features[static_cast<std::size_t>(i)].scales;
          same = same && fa.size() == fb.size();
          for (std::size_t s = 0; same && s < fa.size(); ++s) same = bitwise_equal(fa[s], fb[s]);
        }
        c.check(same, "pool survives save/load bitwise");
      }
      // (c) checkpoint save/load is bitwise.
      {
        LoadedCheckpoint ck = load_checkpoint(tv_full.dir + "/checkpoint.pnpt");
        PNPTModel reloaded = model_from_checkpoint(ck);
        const auto got = reloaded.params().all();
        const auto want = model_full.params().all();
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i)
          same = got[i]->name == want[i]->name && bitwise_equal(got[i]->value, want[i]->value);
        c.check(same, "checkpoint parameters survive save/load bitwise (" + std::to_string(want.size()) +
                          " tensors)");
      }
      // (d) resuming an interrupted run reproduces the loss trajectory.
      {
        RunConfig rc64 = desk_run_config();
        rc64.input_size = 64;
        rc64.epochs = 2;
        rc64.batch_size = 4;
        const Backbone bb64 = load_backbone(rc64.backbone_spec());
        std::vector<std::pair<std::string, std::string>> pairs;
        for (const TrainItem& it : list_train_images(root)) pairs.emplace_back(it.class_id, it.path);
        const NormalityPool pool64 = build_pool(pairs, bb64, rc64.pool_metric, rc64.normalize_codings);

        const TrainResult whole = train(rc64, root, bb64, pool64, tmp.file("resume_whole"));
        RunConfig rc_cut = rc64;
        rc_cut.max_steps = 7;
        const std::string cut_dir = tmp.file("resume_cut");
        train(rc_cut, root, bb64, pool64, cut_dir);
        const TrainResult tail = resume_training(cut_dir + "/checkpoint.pnpt", root, bb64, pool64, cut_dir, &rc64);

        bool ok = whole.step_losses.size() == 7 + tail.step_losses.size() &&
                  whole.epochs_completed == tail.epochs_completed && whole.global_step == tail.global_step;
        double worst = 0.0;
        for (std::size_t i = 0; ok && i < tail.step_losses.size(); ++i)
          worst = std::max(worst, std::abs(tail.step_losses[i] - whole.step_losses[7 + i]));
        ok = ok && worst <= kResumeLossTol;
        c.check(ok, "resumed losses match the uninterrupted run (max deviation " + fmt(worst, 10) + " over " +
                        std::to_string(tail.step_losses.size()) + " steps)");
      }
    }

    // ---- Criterion 9: AUROC equals the pairwise oracle. ----
    {
      Criterion& c = cr[9];
      Rng rng(90210);
      int mismatches = 0;
      for (int trial = 0; trial < kAurocTrials; ++trial) {
        const int n = rng.uniform_int(2, 50);
        const int n_pos = rng.uniform_int(1, n - 1);
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n), 0);
        const bool quantize = trial % 2 == 0;  // force heavy ties on half the instances
        for (int i = 0; i < n; ++i)
          scores[static_cast<std::size_t>(i)] =
              quantize ? static_cast<double>(rng.uniform_int(0, 5)) / 4.0 : rng.uniform();
        for (int i = 0; i < n_pos; ++i) labels[static_cast<std::size_t>(i)] = 1;
        for (int i = n - 1; i > 0; --i) std::swap(labels[static_cast<std::size_t>(i)],
                                                  labels[static_cast<std::size_t>(rng.uniform_int(0, i))]);
        if (auroc(scores, labels) != pairwise_auroc(scores, labels)) ++mismatches;
      }
      c.check(mismatches == 0, "rank-based AUROC equals the O(n^2) oracle on " + std::to_string(kAurocTrials) +
                                   " random instances including ties (" + std::to_string(mismatches) +
                                   " mismatches)");
    }
  } catch (const std::exception& e) {
    for (int i = 1; i <= 9; ++i)
      if (!cr[static_cast<std::size_t>(i)].ran) cr[static_cast<std::size_t>(i)].fail(std::string("aborted: ") + e.what());
  }

  const double suite_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - suite_start).count();
  bool all_pass = true;
  for (int i = 1; i <= 9; ++i) {
    const Criterion& c = cr[static_cast<std::size_t>(i)];
    std::cout << "ACCEPTANCE " << i << ' ' << (c.pass ? "PASS" : "FAIL") << '\n';
    for (const std::string& n : c.notes) std::cout << "    " << n << '\n';
    all_pass = all_pass && c.pass;
  }
  std::cout << "suite wall time: " << fmt(suite_seconds, 1) << "s\n";
  std::cout << (all_pass ? "ALL CRITERIA PASS" : "CRITERIA FAILED") << '\n';
  return all_pass ? 0 : 1;
}
