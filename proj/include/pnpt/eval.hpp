#pragma once

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

#include "pnpt/config.hpp"
#include "pnpt/dataset.hpp"
#include "pnpt/model.hpp"
#include "pnpt/objective.hpp"
#include "pnpt/pool.hpp"

namespace pnpt {

/// Rank-based (Mann-Whitney) AUROC with midrank tie handling. Throws if the
/// labels contain a single class.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ScoredImage {
  AnomalyResult result;
  RetrievalResult retrieval;  // class_index -1 when the pool is empty
};

/// Full single-image inference: backbone -> retrieval -> trunk -> fusion ->
/// anomaly map at rc.input_size. The pool prior feeds the model only in
/// dual-stream mode but retrieval is always reported.
ScoredImage score_image(const Tensor& rgb, const RunConfig& rc, const Backbone& backbone,
                        const NormalityPool& pool, const PNPTModel& model);

struct ImageRecord {
  std::string rel_path;
  std::string class_id;
  std::string defect;
  bool anomalous = false;
  std::string retrieved_class;
  double image_score = 0.0;
};

struct ClassEval {
  std::string class_id;
  int images = 0;
  double image_auroc = 0.0;
  double pixel_auroc = 0.0;
};

struct EvalReport {
  std::vector<ClassEval> per_class;
  double mean_image_auroc = 0.0;  // unweighted class mean
  double mean_pixel_auroc = 0.0;
  double retrieval_accuracy = 0.0;  // over normal test images
  std::vector<ImageRecord> records;
  double seconds_total = 0.0;
  double seconds_per_image = 0.0;

  nlohmann::json to_json() const;
  /// Per-class rows plus a final mean row. Runtime stats stay out of the CSVs
  /// so repeated runs produce byte-identical report files.
  std::string summary_csv() const;
  std::string records_csv() const;
};

/// Test hook: return true to supply the map/score/retrieval directly and skip
/// inference for that item (oracle injection).
using MapOverrideFn =
    std::function<bool(const TestItem&, Tensor& pixel_map, double& image_score, std::string& retrieved_class)>;

struct EvalOptions {
  std::string maps_dir;       // when set, per-image anomaly-map files are written here
  MapOverrideFn override_fn;  // optional oracle injection
};

/// Runs inference over the test split; image AUROC per class over its
/// normal/anomalous images, pixel AUROC pooled over all pixels per class
/// (normal images contribute all-zero masks).
EvalReport evaluate_dataset(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                            const NormalityPool& pool, const PNPTModel& model, const EvalOptions& opts = {});

struct PromptSwapRow {
  std::string rel_path;
  std::string true_class;
  std::string retrieved_class;
  std::string forced_class;
  double d_correct = 0.0;      // prior-branch recon vs true-class prototype, retrieved prior
  double d_forced = 0.0;       // same, under the forced wrong-class prior
  double prior_change = 0.0;   // distance between the two prior-branch recons
  double self_drift = 0.0;     // distance between the two self-branch recons
};

struct PromptSwapReport {
  std::vector<PromptSwapRow> rows;
  std::string forced_class;  // "<cyclic>" when per-image cyclic forcing was used
  double frac_forced_larger = 0.0;  // fraction of rows with d_forced > d_correct
  double mean_d_correct = 0.0;
  double mean_d_forced = 0.0;
  double mean_prior_change = 0.0;
  double mean_self_drift = 0.0;

  nlohmann::json to_json() const;
  std::string csv() const;
};

/// Runs inference twice per test image (retrieved prior vs a wrong-class
/// prior) and measures how the branch reconstructions move. forced_class
/// empty selects, per image, the class after the true one (cyclic), which is
/// always a wrong class. Requires a dual-stream model.
PromptSwapReport prompt_swap_diagnostic(const RunConfig& rc, const std::string& data_root,
                                        const Backbone& backbone, const NormalityPool& pool,
                                        const PNPTModel& model, const std::string& forced_class = "");

}  // namespace pnpt
