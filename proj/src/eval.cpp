#include "pnpt/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pnpt/image.hpp"
#include "pnpt/train.hpp"

namespace fs = std::filesystem;

namespace pnpt {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores/labels size mismatch");
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0 or 1");
    n_pos += l;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auroc undefined: labels contain a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks: tied scores share the average of their 1-based rank range.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

MultiScaleFeatureSet features_from_vars(const Tape& tape, const std::vector<Var>& vars,
                                        const MultiScaleFeatureSet& like, Provenance prov) {
  MultiScaleFeatureSet out;
  out.provenance = prov;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    out.scales.push_back(tape.value(vars[i]).reshaped(like.scales[i].shape()));
  }
  return out;
}

Tensor flatten_concat(const MultiScaleFeatureSet& fs) {
  std::int64_t total = 0;
  for (const auto& s : fs.scales) total += s.numel();
  Tensor out({static_cast<int>(total)});
  std::int64_t at = 0;
  for (const auto& s : fs.scales) {
    std::copy(s.data(), s.data() + s.numel(), out.data() + at);
    at += s.numel();
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string strip_ext(const std::string& rel) {
  const auto dot = rel.find_last_of('.');
  const auto slash = rel.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return rel;
  return rel.substr(0, dot);
}

void parallel_for_items(int n, const std::function<void(int)>& body) {
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&]() {
    try {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min(num_workers(), n));
  std::vector<std::thread> threads;
  for (int w = 1; w < workers; ++w) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

ScoredImage score_image(const Tensor& rgb, const RunConfig& rc, const Backbone& backbone,
                        const NormalityPool& pool, const PNPTModel& model) {
  ScoredImage out;
  Tensor img = resize_rgb(rgb, rc.input_size);
  MultiScaleFeatureSet full = backbone.extract_features(img);
  if (pool.num_classes() > 0) out.retrieval = retrieve_prior(compute_global_coding(full), pool);
  MultiScaleFeatureSet input = select_scales(full, rc.ablation);

  const bool dual = !rc.ablation.disable_pool;
  MultiScaleFeatureSet prior;
  if (dual) {
    if (out.retrieval.class_index < 0) throw std::runtime_error("score error: dual-stream model needs a non-empty pool");
    prior = select_scales(pool.prototype_features[static_cast<std::size_t>(out.retrieval.class_index)], rc.ablation);
  }

  Tape tape;
  auto fo = model.forward_features(tape, input, dual ? &prior : nullptr, /*training=*/false, nullptr);
  MultiScaleFeatureSet recon_self = features_from_vars(tape, fo.recon_self, input, Provenance::reconstruction_self);
  MultiScaleFeatureSet fused;
  if (dual) {
    MultiScaleFeatureSet recon_prior = features_from_vars(tape, fo.recon_prior, input, Provenance::reconstruction_prior);
    fused = fuse_reconstructions(recon_prior, recon_self, rc.fusion);
  } else {
    fused = recon_self;
    fused.provenance = Provenance::fused;
  }
  out.result = anomaly_score(input, fused, rc.input_size, rc.score);
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : per_class) {
    classes.push_back({{"class", c.class_id},
                       {"images", c.images},
                       {"image_auroc", c.image_auroc},
                       {"pixel_auroc", c.pixel_auroc}});
  }
  return nlohmann::json{{"mean_image_auroc", mean_image_auroc},
                        {"mean_pixel_auroc", mean_pixel_auroc},
                        {"retrieval_accuracy", retrieval_accuracy},
                        {"images", records.size()},
                        {"classes", classes},
                        {"seconds_total", seconds_total},
                        {"seconds_per_image", seconds_per_image}};
}

std::string EvalReport::summary_csv() const {
  std::ostringstream os;
  os << "class,images,image_auroc,pixel_auroc\n";
  for (const auto& c : per_class) {
    os << c.class_id << ',' << c.images << ',' << format_double(c.image_auroc) << ',' << format_double(c.pixel_auroc) << '\n';
  }
  os << "mean," << records.size() << ',' << format_double(mean_image_auroc) << ',' << format_double(mean_pixel_auroc) << '\n';
  return os.str();
}

std::string EvalReport::records_csv() const {
  std::ostringstream os;
  os << "rel_path,class,defect,anomalous,retrieved_class,image_score\n";
  for (const auto& r : records) {
    os << r.rel_path << ',' << r.class_id << ',' << r.defect << ',' << (r.anomalous ? 1 : 0) << ','
       << r.retrieved_class << ',' << format_double(r.image_score) << '\n';
  }
  return os.str();
}

EvalReport evaluate_dataset(const RunConfig& rc, const std::string& data_root, const Backbone& backbone,
                            const NormalityPool& pool, const PNPTModel& model, const EvalOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<TestItem> items = list_test_images(data_root);
  const int n = static_cast<int>(items.size());

  EvalReport report;
  report.records.resize(static_cast<std::size_t>(n));
  std::vector<Tensor> maps(static_cast<std::size_t>(n));

  parallel_for_items(n, [&](int i) {
    const TestItem& item = items[static_cast<std::size_t>(i)];
    Tensor map;
    double image_score = 0.0;
    std::string retrieved;
    if (!opts.override_fn || !opts.override_fn(item, map, image_score, retrieved)) {
      ScoredImage scored = score_image(load_image_rgb(item.path), rc, backbone, pool, model);
      image_score = scored.result.image_score;
      retrieved = scored.retrieval.class_id;
      if (!opts.maps_dir.empty()) {
        const std::string prefix = opts.maps_dir + "/" + strip_ext(item.rel_path);
        fs::create_directories(fs::path(prefix).parent_path());
        save_anomaly_result(scored.result, prefix, retrieved);
      }
      map = std::move(scored.result.pixel_map);
    }
    ImageRecord& rec = report.records[static_cast<std::size_t>(i)];
    rec.rel_path = item.rel_path;
    rec.class_id = item.class_id;
    rec.defect = item.defect;
    rec.anomalous = item.anomalous;
    rec.retrieved_class = retrieved;
    rec.image_score = image_score;
    maps[static_cast<std::size_t>(i)] = std::move(map);
  });

  const std::vector<std::string> classes = list_classes(data_root);
  std::int64_t normals = 0, hits = 0;
  for (const auto& c : classes) {
    std::vector<double> img_scores;
    std::vector<int> img_labels;
    std::vector<double> px_scores;
    std::vector<int> px_labels;
    int count = 0;
    for (int i = 0; i < n; ++i) {
      const TestItem& item = items[static_cast<std::size_t>(i)];
      if (item.class_id != c) continue;
      ++count;
      const ImageRecord& rec = report.records[static_cast<std::size_t>(i)];
      img_scores.push_back(rec.image_score);
      img_labels.push_back(item.anomalous ? 1 : 0);
      if (!item.anomalous) {
        ++normals;
        if (rec.retrieved_class == item.class_id) ++hits;
      }
      const Tensor& map = maps[static_cast<std::size_t>(i)];
      Tensor mask;
      if (item.anomalous) {
        mask = load_mask(item.mask_path);
        if (mask.dim(0) != map.dim(0) || mask.dim(1) != map.dim(1)) {
          mask = resize_map_nearest(mask, map.dim(0), map.dim(1));
        }
      }
      for (std::int64_t p = 0; p < map.numel(); ++p) {
        px_scores.push_back(map[p]);
        px_labels.push_back(item.anomalous ? (mask[p] > 0.5 ? 1 : 0) : 0);
      }
    }
    ClassEval ce;
    ce.class_id = c;
    ce.images = count;
    ce.image_auroc = auroc(img_scores, img_labels);
    ce.pixel_auroc = auroc(px_scores, px_labels);
    report.per_class.push_back(ce);
    report.mean_image_auroc += ce.image_auroc;
    report.mean_pixel_auroc += ce.pixel_auroc;
  }
  report.mean_image_auroc /= static_cast<double>(classes.size());
  report.mean_pixel_auroc /= static_cast<double>(classes.size());
  report.retrieval_accuracy = normals > 0 ? static_cast<double>(hits) / static_cast<double>(normals) : 0.0;

  const auto t1 = std::chrono::steady_clock::now();
  report.seconds_total = std::chrono::duration<double>(t1 - t0).count();
  report.seconds_per_image = n > 0 ? report.seconds_total / n : 0.0;
  return report;
}

nlohmann::json PromptSwapReport::to_json() const {
  return nlohmann::json{{"forced_class", forced_class},
                        {"images", rows.size()},
                        {"frac_forced_larger", frac_forced_larger},
                        {"mean_d_correct", mean_d_correct},
                        {"mean_d_forced", mean_d_forced},
                        {"mean_prior_change", mean_prior_change},
                        {"mean_self_drift", mean_self_drift}};
}

std::string PromptSwapReport::csv() const {
  std::ostringstream os;
  os << "rel_path,true_class,retrieved_class,forced_class,d_correct,d_forced,prior_change,self_drift\n";
  for (const auto& r : rows) {
    os << r.rel_path << ',' << r.true_class << ',' << r.retrieved_class << ',' << r.forced_class << ','
       << format_double(r.d_correct) << ',' << format_double(r.d_forced) << ','
       << format_double(r.prior_change) << ',' << format_double(r.self_drift) << '\n';
  }
  return os.str();
}

PromptSwapReport prompt_swap_diagnostic(const RunConfig& rc, const std::string& data_root,
                                        const Backbone& backbone, const NormalityPool& pool,
                                        const PNPTModel& model, const std::string& forced_class) {
  if (rc.ablation.disable_pool || !model.dual_stream()) {
    throw std::runtime_error("prompt-swap requires a dual-stream model (pool enabled)");
  }
  if (!forced_class.empty() && pool.class_index(forced_class) < 0) {
    throw std::runtime_error("prompt-swap: class " + forced_class + " not in pool");
  }
  const std::vector<TestItem> items = list_test_images(data_root);
  const int n = static_cast<int>(items.size());
  const int k = pool.num_classes();
  if (k < 2) throw std::runtime_error("prompt-swap needs at least two pool classes");

  std::vector<MultiScaleFeatureSet> protos;
  for (int c = 0; c < k; ++c) {
    protos.push_back(select_scales(pool.prototype_features[static_cast<std::size_t>(c)], rc.ablation));
  }

  PromptSwapReport report;
  report.forced_class = forced_class.empty() ? "<cyclic>" : forced_class;
  report.rows.resize(static_cast<std::size_t>(n));

  parallel_for_items(n, [&](int i) {
    const TestItem& item = items[static_cast<std::size_t>(i)];
    const int true_idx = pool.class_index(item.class_id);
    if (true_idx < 0) throw std::runtime_error("prompt-swap: class " + item.class_id + " not in pool");

    Tensor img = resize_rgb(load_image_rgb(item.path), rc.input_size);
    MultiScaleFeatureSet full = backbone.extract_features(img);
    RetrievalResult retrieval = retrieve_prior(compute_global_coding(full), pool);
    MultiScaleFeatureSet input = select_scales(full, rc.ablation);
    const int forced_idx = forced_class.empty() ? (true_idx + 1) % k : pool.class_index(forced_class);

    auto run = [&](int prior_idx, MultiScaleFeatureSet& rp, MultiScaleFeatureSet& rs) {
      Tape tape;
      auto fo = model.forward_features(tape, input, &protos[static_cast<std::size_t>(prior_idx)], false, nullptr);
      rp = features_from_vars(tape, fo.recon_prior, input, Provenance::reconstruction_prior);
      rs = features_from_vars(tape, fo.recon_self, input, Provenance::reconstruction_self);
    };
    MultiScaleFeatureSet rp_correct, rs_correct, rp_forced, rs_forced;
    run(retrieval.class_index, rp_correct, rs_correct);
    run(forced_idx, rp_forced, rs_forced);

    const Tensor proto_true = flatten_concat(protos[static_cast<std::size_t>(true_idx)]);
    PromptSwapRow& row = report.rows[static_cast<std::size_t>(i)];
    row.rel_path = item.rel_path;
    row.true_class = item.class_id;
    row.retrieved_class = retrieval.class_id;
    row.forced_class = pool.classes[static_cast<std::size_t>(forced_idx)];
    row.d_correct = cosine_distance_value(flatten_concat(rp_correct), proto_true);
    row.d_forced = cosine_distance_value(flatten_concat(rp_forced), proto_true);
    row.prior_change = cosine_distance_value(flatten_concat(rp_correct), flatten_concat(rp_forced));
    row.self_drift = cosine_distance_value(flatten_concat(rs_correct), flatten_concat(rs_forced));
  });

  std::int64_t larger = 0;
  for (const auto& r : report.rows) {
    if (r.d_forced > r.d_correct) ++larger;
    report.mean_d_correct += r.d_correct;
    report.mean_d_forced += r.d_forced;
    report.mean_prior_change += r.prior_change;
    report.mean_self_drift += r.self_drift;
  }
  if (n > 0) {
    report.frac_forced_larger = static_cast<double>(larger) / n;
    report.mean_d_correct /= n;
    report.mean_d_forced /= n;
    report.mean_prior_change /= n;
    report.mean_self_drift /= n;
  }
  return report;
}

}  // namespace pnpt
