#include "pnpt/pool.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pnpt/archive.hpp"
#include "pnpt/image.hpp"
#include "pnpt/rng.hpp"

namespace pnpt {

PoolMetric pool_metric_from_string(const std::string& s) {
  if (s == "euclidean") return PoolMetric::euclidean;
  if (s == "cosine") return PoolMetric::cosine;
  throw std::invalid_argument("unknown pool metric '" + s + "' (expected 'euclidean' or 'cosine')");
}

std::string to_string(PoolMetric m) { return m == PoolMetric::euclidean ? "euclidean" : "cosine"; }

int NormalityPool::class_index(const std::string& id) const {
  for (int i = 0; i < num_classes(); ++i)
    if (classes[static_cast<std::size_t>(i)] == id) return i;
  return -1;
}

GlobalCoding compute_global_coding(const MultiScaleFeatureSet& features) {
  int total = 0;
  for (const auto& s : features.scales) total += s.dim(0);
  GlobalCoding out;
  out.vector = Tensor({total});
  std::int64_t at = 0;
  for (const auto& s : features.scales) {
    const std::int64_t spatial = static_cast<std::int64_t>(s.dim(1)) * s.dim(2);
    for (int c = 0; c < s.dim(0); ++c) {
      const double* plane = s.data() + c * spatial;
      double sum = 0.0;
      for (std::int64_t i = 0; i < spatial; ++i) sum += plane[i];
      out.vector[at++] = sum / static_cast<double>(spatial);
    }
  }
  return out;
}

double coding_distance(const Tensor& a, const Tensor& b, PoolMetric metric) {
  if (a.numel() != b.numel()) throw std::invalid_argument("coding_distance: length mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (metric == PoolMetric::euclidean) {
    double d2 = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const double d = a[i] - b[i];
      d2 += d * d;
    }
    return d2;
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

namespace {

Tensor l2_normalized(const Tensor& v) {
  double n = 0.0;
  for (std::int64_t i = 0; i < v.numel(); ++i) n += v[i] * v[i];
  n = std::sqrt(n) + 1e-12;
  Tensor out = v;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= n;
  return out;
}

}  // namespace

PoolBuilder::PoolBuilder(PoolMetric metric, bool normalize_codings, std::string backbone_fingerprint)
    : metric_(metric), normalize_(normalize_codings), fingerprint_(std::move(backbone_fingerprint)) {}

void PoolBuilder::add(const std::string& class_id, const MultiScaleFeatureSet& features) {
  if (!features.all_finite()) throw std::invalid_argument("pool build: non-finite features for class " + class_id);
  GlobalCoding coding = compute_global_coding(features);
  std::size_t idx = order_.size();
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (order_[i] == class_id) {
      idx = i;
      break;
    }
  }
  if (idx == order_.size()) {
    order_.push_back(class_id);
    Accum a;
    a.mean_features = features;
    a.mean_features.provenance = Provenance::prior;
    a.mean_coding = coding.vector;
    a.count = 1;
    acc_.push_back(std::move(a));
    return;
  }
  Accum& a = acc_[idx];
  require_same_shapes(a.mean_features, features, "pool build (class " + class_id + ")");
  a.count += 1;
  const double inv_n = 1.0 / static_cast<double>(a.count);
  for (std::size_t s = 0; s < features.scales.size(); ++s) {
    Tensor& mean = a.mean_features.scales[s];
    const Tensor& x = features.scales[s];
    for (std::int64_t i = 0; i < mean.numel(); ++i) mean[i] += (x[i] - mean[i]) * inv_n;
  }
  for (std::int64_t i = 0; i < a.mean_coding.numel(); ++i) a.mean_coding[i] += (coding.vector[i] - a.mean_coding[i]) * inv_n;
}

NormalityPool PoolBuilder::finish() {
  if (order_.empty()) throw std::runtime_error("pool build: no training images supplied");
  std::vector<std::size_t> perm(order_.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return order_[a] < order_[b]; });
  NormalityPool pool;
  pool.metric = metric_;
  pool.normalize_codings = normalize_;
  pool.backbone_fingerprint = fingerprint_;
  for (std::size_t p : perm) {
    pool.classes.push_back(order_[p]);
    pool.prototype_features.push_back(std::move(acc_[p].mean_features));
    Tensor coding = std::move(acc_[p].mean_coding);
    if (normalize_) coding = l2_normalized(coding);
    pool.prototype_codings.push_back(GlobalCoding{std::move(coding)});
    pool.sample_counts.push_back(acc_[p].count);
  }
  return pool;
}

NormalityPool build_pool(const std::vector<std::pair<std::string, std::string>>& class_and_image,
                         const Backbone& backbone, PoolMetric metric, bool normalize_codings) {
  PoolBuilder builder(metric, normalize_codings, backbone.fingerprint());
  for (const auto& [class_id, path] : class_and_image) {
    Tensor img = resize_rgb(load_image_rgb(path), backbone.spec().input_size);
    builder.add(class_id, backbone.extract_features(img));
  }
  return builder.finish();
}

RetrievalResult retrieve_prior(const GlobalCoding& coding, const NormalityPool& pool) {
  if (pool.num_classes() == 0) throw std::invalid_argument("retrieve_prior: empty pool");
  Tensor query = pool.normalize_codings ? l2_normalized(coding.vector) : coding.vector;
  RetrievalResult best;
  for (int i = 0; i < pool.num_classes(); ++i) {
    const double d = coding_distance(query, pool.prototype_codings[static_cast<std::size_t>(i)].vector, pool.metric);
    if (best.class_index < 0 || d < best.distance) {
      best.class_index = i;
      best.distance = d;
    }
  }
  best.class_id = pool.classes[static_cast<std::size_t>(best.class_index)];
  return best;
}

void save_pool(const NormalityPool& pool, const std::string& path) {
  TensorArchive arch;
  for (int i = 0; i < pool.num_classes(); ++i) {
    const auto& fs = pool.prototype_features[static_cast<std::size_t>(i)];
    for (std::size_t s = 0; s < fs.scales.size(); ++s) {
      arch.add("class/" + std::to_string(i) + "/scale/" + std::to_string(s), fs.scales[s]);
    }
    arch.add("class/" + std::to_string(i) + "/coding", pool.prototype_codings[static_cast<std::size_t>(i)].vector);
  }
  arch.meta()["kind"] = "normality_pool";
  arch.meta()["classes"] = pool.classes;
  arch.meta()["sample_counts"] = pool.sample_counts;
  arch.meta()["metric"] = to_string(pool.metric);
  arch.meta()["normalize_codings"] = pool.normalize_codings;
  arch.meta()["backbone_fingerprint"] = pool.backbone_fingerprint;
  arch.meta()["num_scales"] = pool.prototype_features.empty() ? 0 : pool.prototype_features[0].num_scales();
  arch.save(path);
}

NormalityPool load_pool(const std::string& path) {
  TensorArchive arch = TensorArchive::load(path);
  const auto& meta = arch.meta();
  if (!meta.contains("kind") || meta["kind"] != "normality_pool") throw std::runtime_error("corrupt archive " + path + ": not a normality pool");
  NormalityPool pool;
  pool.classes = meta["classes"].get<std::vector<std::string>>();
  pool.sample_counts = meta["sample_counts"].get<std::vector<std::int64_t>>();
  pool.metric = pool_metric_from_string(meta["metric"].get<std::string>());
  pool.normalize_codings = meta["normalize_codings"].get<bool>();
  pool.backbone_fingerprint = meta["backbone_fingerprint"].get<std::string>();
  const int num_scales = meta["num_scales"].get<int>();
  for (int i = 0; i < static_cast<int>(pool.classes.size()); ++i) {
    MultiScaleFeatureSet fs;
    fs.provenance = Provenance::prior;
    for (int s = 0; s < num_scales; ++s) fs.scales.push_back(arch.get("class/" + std::to_string(i) + "/scale/" + std::to_string(s)));
    pool.prototype_features.push_back(std::move(fs));
    pool.prototype_codings.push_back(GlobalCoding{arch.get("class/" + std::to_string(i) + "/coding")});
  }
  return pool;
}

void validate_pool(const NormalityPool& pool, double tol) {
  for (int i = 0; i < pool.num_classes(); ++i) {
    if (pool.sample_counts[static_cast<std::size_t>(i)] <= 0) throw std::runtime_error("pool: class " + pool.classes[static_cast<std::size_t>(i)] + " has no samples");
    Tensor expect = compute_global_coding(pool.prototype_features[static_cast<std::size_t>(i)]).vector;
    if (pool.normalize_codings) expect = l2_normalized(expect);
    const double diff = max_abs_diff(expect, pool.prototype_codings[static_cast<std::size_t>(i)].vector);
    if (diff > tol) {
      throw std::runtime_error("pool: coding of class " + pool.classes[static_cast<std::size_t>(i)] + " inconsistent with prototype features (max abs diff " + std::to_string(diff) + ")");
    }
  }
}

std::vector<BenchRow> bench_retrieval(const std::vector<int>& pool_sizes, const std::vector<int>& image_counts,
                                      int coding_dim, std::uint64_t seed, double min_cell_seconds) {
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  volatile double sink = 0.0;  // keeps the scan from being optimized away
  for (int k : pool_sizes) {
    for (int n : image_counts) {
      Rng rng(derive_seed(seed, fnv1a64("bench"), static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(n)));
      // Pool construction sees all N codings (streaming mean), retrieval only K prototypes.
      PoolBuilder builder(PoolMetric::euclidean, false, "bench");
      for (int img = 0; img < n; ++img) {
        const int cls = img % k;
        MultiScaleFeatureSet fs;
        Tensor t({coding_dim, 1, 1});
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(static_cast<double>(cls), 1.0);
        fs.scales.push_back(std::move(t));
        builder.add("c" + std::to_string(cls), fs);
      }
      NormalityPool pool = builder.finish();
      const int n_queries = 256;
      std::vector<GlobalCoding> queries(n_queries);
      for (auto& q : queries) {
        q.vector = Tensor({coding_dim});
        for (std::int64_t i = 0; i < q.vector.numel(); ++i) q.vector[i] = rng.normal(0.0, 2.0);
      }
      // Warm up, then batch queries until the cell has run long enough.
      for (int i = 0; i < 32; ++i) sink = sink + retrieve_prior(queries[static_cast<std::size_t>(i % n_queries)], pool).distance;
      std::int64_t done = 0;
      const auto start = clock::now();
      double elapsed = 0.0;
      while (elapsed < min_cell_seconds) {
        for (int i = 0; i < n_queries; ++i) sink = sink + retrieve_prior(queries[static_cast<std::size_t>(i)], pool).distance;
        done += n_queries;
        elapsed = std::chrono::duration<double>(clock::now() - start).count();
      }
      rows.push_back(BenchRow{k, n, done, elapsed * 1e9 / static_cast<double>(done)});
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "num_classes,train_images,queries,mean_latency_ns\n";
  for (const auto& r : rows) out << r.num_classes << ',' << r.train_images << ',' << r.queries << ',' << r.mean_latency_ns << '\n';
  return out.str();
}

}  // namespace pnpt
