#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnpt/backbone.hpp"
#include "pnpt/features.hpp"
#include "pnpt/tensor.hpp"

namespace pnpt {

/// Concatenation of per-scale global-average-pooled feature vectors; the
/// class-retrieval key. Length = sum of backbone scale channels.
struct GlobalCoding {
  Tensor vector;  // 1-D
};

enum class PoolMetric { euclidean, cosine };

PoolMetric pool_metric_from_string(const std::string& s);
std::string to_string(PoolMetric m);

/// Class-prototype memory: per class, the running mean of training features
/// and of their codings. Storage is O(classes), independent of training-set
/// size; retrieval is a linear scan over classes.
struct NormalityPool {
  std::vector<std::string> classes;  // sorted lexicographically
  std::vector<MultiScaleFeatureSet> prototype_features;  // provenance = prior
  std::vector<GlobalCoding> prototype_codings;
  std::vector<std::int64_t> sample_counts;
  PoolMetric metric = PoolMetric::euclidean;
  bool normalize_codings = false;
  std::string backbone_fingerprint;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int class_index(const std::string& id) const;  // -1 if absent
};

/// GAP-concat: per scale, the spatial mean of each channel, scales in order.
GlobalCoding compute_global_coding(const MultiScaleFeatureSet& features);

double coding_distance(const Tensor& a, const Tensor& b, PoolMetric metric);

/// Streaming pool construction; feed per-image features, then finish().
class PoolBuilder {
 public:
  PoolBuilder(PoolMetric metric, bool normalize_codings, std::string backbone_fingerprint);
  void add(const std::string& class_id, const MultiScaleFeatureSet& features);
  NormalityPool finish();

 private:
  struct Accum {
    MultiScaleFeatureSet mean_features;
    Tensor mean_coding;
    std::int64_t count = 0;
  };
  std::vector<std::string> order_;
  std::vector<Accum> acc_;
  PoolMetric metric_;
  bool normalize_;
  std::string fingerprint_;
};

/// Builds the pool from (class_id, image path) pairs through the backbone.
/// Every class needs at least one image; images must all be normal.
NormalityPool build_pool(const std::vector<std::pair<std::string, std::string>>& class_and_image,
                         const Backbone& backbone, PoolMetric metric = PoolMetric::euclidean,
                         bool normalize_codings = false);

struct RetrievalResult {
  int class_index = -1;
  std::string class_id;
  double distance = 0.0;
};

/// Nearest prototype coding under the pool metric; ties break toward the
/// lower class index. The matching prototype features are
/// pool.prototype_features[result.class_index].
RetrievalResult retrieve_prior(const GlobalCoding& coding, const NormalityPool& pool);

void save_pool(const NormalityPool& pool, const std::string& path);
NormalityPool load_pool(const std::string& path);

/// Consistency check: stored codings equal GAP-concat of stored prototypes
/// within tol (pooling and averaging commute).
void validate_pool(const NormalityPool& pool, double tol = 1e-5);

struct BenchRow {
  int num_classes = 0;
  int train_images = 0;
  std::int64_t queries = 0;
  double mean_latency_ns = 0.0;
};

/// Times nearest-coding retrieval for each (K, N) pair on synthetic codings;
/// each cell keeps querying until min_cell_seconds has elapsed so the means
/// are stable. Shows latency depends on class count K, not training size N.
std::vector<BenchRow> bench_retrieval(const std::vector<int>& pool_sizes, const std::vector<int>& image_counts,
                                      int coding_dim, std::uint64_t seed, double min_cell_seconds = 0.1);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace pnpt
