#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnpt/config.hpp"
#include "pnpt/model.hpp"
#include "pnpt/pool.hpp"

namespace pnpt {

/// Adam with decoupled weight decay; decay applies only to parameters flagged
/// decay (weight matrices, not biases/norms/tables).
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void attach(ParameterStore& params);  // allocates state in store order
  void step(ParameterStore& params);
  std::int64_t steps_taken() const { return t_; }

  void add_to_archive(TensorArchive& arch) const;
  void load_from_archive(const TensorArchive& arch, const ParameterStore& params);

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
  std::vector<std::string> names_;
};

/// Scales all trainable gradients so their global L2 norm is at most
/// max_norm (no-op when max_norm <= 0); returns the pre-clip norm.
double clip_global_norm(ParameterStore& params, double max_norm);

struct TrainResult {
  std::string checkpoint_path;
  std::vector<double> step_losses;  // this run only (resume starts fresh)
  int epochs_completed = 0;         // cumulative, from the checkpoint counter
  std::int64_t global_step = 0;
};

/// Short tag binding a checkpoint to the pool it was trained against.
std::string pool_tag(const NormalityPool& pool);

void save_checkpoint(const std::string& path, const PNPTModel& model, const AdamW& opt,
                     const RunConfig& rc, int epoch_next, std::int64_t global_step,
                     const std::string& pool_tag_value);

struct LoadedCheckpoint {
  RunConfig rc;
  int epoch_next = 0;
  std::int64_t global_step = 0;
  std::string pool_tag;
  TensorArchive archive;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

/// Builds a model from the checkpoint's embedded config and restores its
/// parameters (evaluation entry point).
PNPTModel model_from_checkpoint(const LoadedCheckpoint& ck);

/// Trains from scratch per the config: per step, cached backbone features ->
/// pool retrieval -> HPE(noise) -> trunk -> inverse HPE -> cosine loss ->
/// AdamW. Writes <out_dir>/loss.csv and <out_dir>/checkpoint.pnpt.
/// Single-threaded step order; feature extraction may use PNPT_NUM_WORKERS.
TrainResult train(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                  const NormalityPool& pool, const std::string& out_dir);

/// Continues an interrupted run exactly (same loss trajectory). Errors if
/// expected_rc is supplied and its config hash differs from the checkpoint's,
/// or if the pool does not match. Resuming a finished run is a no-op.
TrainResult resume_training(const std::string& checkpoint_path, const std::string& data_root,
                            const Backbone& backbone, const NormalityPool& pool,
                            const std::string& out_dir, const RunConfig* expected_rc = nullptr);

/// min(PNPT_NUM_WORKERS, hardware concurrency), at least 1.
int num_workers();

}  // namespace pnpt
