#include "pnpt/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pnpt/dataset.hpp"
#include "pnpt/image.hpp"
#include "pnpt/objective.hpp"

namespace fs = std::filesystem;

namespace pnpt {

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::attach(ParameterStore& params) {
  m_.clear();
  v_.clear();
  names_.clear();
  t_ = 0;
  for (const Parameter* p : params.all()) {
    if (!p->trainable) continue;
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
    names_.push_back(p->name);
  }
}

void AdamW::step(ParameterStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t slot = 0;
  for (Parameter* p : params.all()) {
    if (!p->trainable) continue;
    Tensor& m = m_[slot];
    Tensor& v = v_[slot];
    ++slot;
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_) + (p->decay ? wd_ * p->value[i] : 0.0);
      p->value[i] -= lr_ * update;
    }
  }
}

void AdamW::add_to_archive(TensorArchive& arch) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    arch.add("opt/" + names_[i] + "/m", m_[i]);
    arch.add("opt/" + names_[i] + "/v", v_[i]);
  }
  arch.add("opt/t", Tensor({1}, {static_cast<double>(t_)}));
}

void AdamW::load_from_archive(const TensorArchive& arch, const ParameterStore&) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (const char* part : {"m", "v"}) {
      const std::string name = "opt/" + names_[i] + "/" + part;
      if (!arch.has(name)) throw std::runtime_error("checkpoint load error: missing tensor " + name);
      const Tensor& t = arch.get(name);
      Tensor& dst = std::string(part) == "m" ? m_[i] : v_[i];
      if (t.shape() != dst.shape()) throw std::runtime_error("checkpoint load error: tensor " + name + " shape mismatch");
      dst = t;
    }
  }
  t_ = static_cast<std::int64_t>(arch.get("opt/t")[0]);
}

double clip_global_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params.all()) {
    if (!p->trainable) continue;
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Parameter* p : params.all()) {
      if (!p->trainable) continue;
      for (std::int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
    }
  }
  return norm;
}

int num_workers() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int workers = std::min(hw, 8);
  if (const char* env = std::getenv("PNPT_NUM_WORKERS")) {
    try {
      workers = std::max(1, std::min(workers, std::stoi(env)));
    } catch (...) {
      throw std::invalid_argument("PNPT_NUM_WORKERS must be an integer, got '" + std::string(env) + "'");
    }
  }
  return workers;
}

std::string pool_tag(const NormalityPool& pool) {
  std::ostringstream canon;
  canon << pool.backbone_fingerprint << '|' << to_string(pool.metric) << '|' << pool.normalize_codings;
  for (const auto& c : pool.classes) canon << '|' << c;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(canon.str());
  return hex.str();
}

void save_checkpoint(const std::string& path, const PNPTModel& model, const AdamW& opt,
                     const RunConfig& rc, int epoch_next, std::int64_t global_step,
                     const std::string& pool_tag_value) {
  TensorArchive arch;
  model.add_to_archive(arch);
  opt.add_to_archive(arch);
  arch.meta()["kind"] = "checkpoint";
  arch.meta()["config"] = materialize(rc).canonical_text();
  std::ostringstream hash;
  hash << std::hex << config_hash(rc);
  arch.meta()["config_hash"] = hash.str();
  arch.meta()["epoch_next"] = epoch_next;
  arch.meta()["global_step"] = global_step;
  arch.meta()["pool_tag"] = pool_tag_value;
  arch.save(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint ck;
  ck.archive = TensorArchive::load(path);
  const auto& meta = ck.archive.meta();
  if (!meta.contains("kind") || meta["kind"] != "checkpoint") throw std::runtime_error("corrupt archive " + path + ": not a checkpoint");
  ck.rc = run_config_from(Config::from_text(meta["config"].get<std::string>(), path + "#config"));
  ck.epoch_next = meta["epoch_next"].get<int>();
  ck.global_step = meta["global_step"].get<std::int64_t>();
  ck.pool_tag = meta["pool_tag"].get<std::string>();
  return ck;
}

PNPTModel model_from_checkpoint(const LoadedCheckpoint& ck) {
  PNPTModel model(ck.rc.model_config());
  model.load_from_archive(ck.archive);
  return model;
}

namespace {

struct PreparedData {
  std::vector<TrainItem> items;
  std::vector<MultiScaleFeatureSet> features;            // model-input scales
  std::vector<int> prior_class;                          // -1 in single-stream mode
  std::vector<MultiScaleFeatureSet> priors_by_class;     // model-input scales
};

PreparedData prepare(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                     const NormalityPool& pool) {
  PreparedData data;
  data.items = list_train_images(data_root);
  const bool dual = !rc.ablation.disable_pool;
  for (const auto& item : data.items) {
    if (dual && pool.class_index(item.class_id) < 0) {
      throw std::runtime_error("dataset/pool class mismatch: class " + item.class_id + " not in pool");
    }
  }
  const int n = static_cast<int>(data.items.size());
  data.features.resize(static_cast<std::size_t>(n));
  data.prior_class.assign(static_cast<std::size_t>(n), -1);

  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&]() {
    try {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        Tensor img = resize_rgb(load_image_rgb(data.items[static_cast<std::size_t>(i)].path), rc.input_size);
        MultiScaleFeatureSet full = backbone.extract_features(img);
        if (dual) data.prior_class[static_cast<std::size_t>(i)] = retrieve_prior(compute_global_coding(full), pool).class_index;
        data.features[static_cast<std::size_t>(i)] = select_scales(full, rc.ablation);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };
  const int workers = std::min(num_workers(), n);
  std::vector<std::thread> threads;
  for (int w = 1; w < workers; ++w) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);

  if (dual) {
    for (int k = 0; k < pool.num_classes(); ++k) {
      data.priors_by_class.push_back(select_scales(pool.prototype_features[static_cast<std::size_t>(k)], rc.ablation));
    }
  }
  return data;
}

TrainResult run_training(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                         const NormalityPool& pool, const std::string& out_dir,
                         PNPTModel& model, AdamW& opt, std::int64_t global_step, bool append_csv) {
  PreparedData data = prepare(rc, data_root, backbone, pool);
  const int n = static_cast<int>(data.items.size());
  const int spe = (n + rc.batch_size - 1) / rc.batch_size;  // steps per epoch
  const std::int64_t total_steps = static_cast<std::int64_t>(rc.epochs) * spe;
  const bool dual = !rc.ablation.disable_pool;

  fs::create_directories(out_dir);
  const std::string csv_path = out_dir + "/loss.csv";
  std::ofstream csv(csv_path, append_csv ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << std::setprecision(10);
  if (!append_csv) csv << "step,epoch,loss\n";

  const std::string ck_path = out_dir + "/checkpoint.pnpt";
  const std::string tag = pool_tag(pool);
  TrainResult result;
  result.checkpoint_path = ck_path;

  std::vector<int> perm(static_cast<std::size_t>(n));
  int perm_epoch = -1;
  while (global_step < total_steps && (rc.max_steps == 0 || global_step < rc.max_steps)) {
    const int epoch = static_cast<int>(global_step / spe);
    const int step = static_cast<int>(global_step % spe);
    if (epoch != perm_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng shuffler(derive_seed(rc.seed, fnv1a64("perm"), static_cast<std::uint64_t>(epoch)));
      for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(shuffler.uniform_int(0, i))]);
      perm_epoch = epoch;
    }
    const int lo = step * rc.batch_size;
    const int hi = std::min(n, lo + rc.batch_size);
    const double inv_batch = 1.0 / static_cast<double>(hi - lo);
    double batch_loss = 0.0;
    for (int b = lo; b < hi; ++b) {
      const int idx = perm[static_cast<std::size_t>(b)];
      const MultiScaleFeatureSet& input = data.features[static_cast<std::size_t>(idx)];
      const MultiScaleFeatureSet* prior = dual ? &data.priors_by_class[static_cast<std::size_t>(data.prior_class[static_cast<std::size_t>(idx)])] : nullptr;
      Rng noise_rng(derive_seed(rc.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx), 0x6e6f697365ull));
      Tape tape;
      auto out = model.forward_features(tape, input, prior, /*training=*/true, &noise_rng);
      std::vector<Var> input_vars;
      for (const auto& s : input.scales) {
        input_vars.push_back(tape.constant(s.reshaped({s.dim(0), s.dim(1) * s.dim(2)})));
      }
      Var loss = reconstruction_loss_tape(tape, input_vars, out.recon_prior, out.recon_self);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(global_step));
      batch_loss += lv * inv_batch;
      tape.backward(tape.scale(loss, inv_batch));
    }
    clip_global_norm(model.params(), rc.grad_clip);
    opt.step(model.params());
    model.params().zero_grads();

    csv << global_step << ',' << epoch << ',' << batch_loss << '\n';
    result.step_losses.push_back(batch_loss);
    ++global_step;

    const bool epoch_done = (global_step % spe) == 0;
    if (epoch_done && rc.checkpoint_every > 0 && ((epoch + 1) % rc.checkpoint_every) == 0 && global_step < total_steps) {
      save_checkpoint(ck_path, model, opt, rc, epoch + 1, global_step, tag);
    }
  }
  csv.flush();
  result.global_step = global_step;
  result.epochs_completed = static_cast<int>(global_step / spe);
  save_checkpoint(ck_path, model, opt, rc, result.epochs_completed, global_step, tag);
  return result;
}

}  // namespace

TrainResult train(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                  const NormalityPool& pool, const std::string& out_dir) {
  rc.validate();
  PNPTModel model(rc.model_config());
  AdamW opt(rc.learning_rate, rc.weight_decay);
  opt.attach(model.params());
  return run_training(rc, data_root, backbone, pool, out_dir, model, opt, 0, /*append_csv=*/false);
}

TrainResult resume_training(const std::string& checkpoint_path, const std::string& data_root,
                            const Backbone& backbone, const NormalityPool& pool,
                            const std::string& out_dir, const RunConfig* expected_rc) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  if (expected_rc && config_hash(*expected_rc) != config_hash(ck.rc)) {
    throw std::runtime_error("config hash mismatch: checkpoint " + checkpoint_path + " was trained with a different configuration");
  }
  if (pool_tag(pool) != ck.pool_tag) {
    throw std::runtime_error("checkpoint " + checkpoint_path + " was trained against a different pool");
  }
  RunConfig rc = ck.rc;
  // Operational knobs belong to the invocation, not the run: a step cap from
  // the interrupted run must not cap the resume.
  rc.max_steps = expected_rc ? expected_rc->max_steps : 0;
  if (expected_rc) rc.checkpoint_every = expected_rc->checkpoint_every;
  const int n = static_cast<int>(list_train_images(data_root).size());
  const int spe = (n + rc.batch_size - 1) / rc.batch_size;
  if (ck.global_step >= static_cast<std::int64_t>(rc.epochs) * spe) {
    TrainResult done;
    done.checkpoint_path = checkpoint_path;
    done.global_step = ck.global_step;
    done.epochs_completed = rc.epochs;
    return done;
  }
  PNPTModel model = model_from_checkpoint(ck);
  AdamW opt(rc.learning_rate, rc.weight_decay);
  opt.attach(model.params());
  opt.load_from_archive(ck.archive, model.params());
  return run_training(rc, data_root, backbone, pool, out_dir, model, opt, ck.global_step, /*append_csv=*/true);
}

}  // namespace pnpt
