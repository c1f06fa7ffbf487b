#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xpro/corpus.hpp"
#include "xpro/tensor.hpp"

namespace xpro {

/// Global visual / flipped-visual / textual representations of one sample.
struct GlobalFeatures {
  std::vector<double> visual;          // length C1
  std::vector<double> visual_flipped;  // length C1
  std::vector<double> textual;         // length C2
};

/// Stand-in for pretrained encoders: fixed seeded random projections of the
/// mean patch vector (visual) and the report's bag-of-words counts (textual).
class ToyFeatureExtractor {
 public:
  ToyFeatureExtractor(int channels, int vocab_size, int visual_dim, int textual_dim,
                      std::uint64_t seed);

  GlobalFeatures extract(const Sample& s) const;

  int visual_dim() const { return visual_dim_; }
  int textual_dim() const { return textual_dim_; }
  int feature_dim() const { return visual_dim_ + textual_dim_; }

 private:
  int channels_, vocab_size_, visual_dim_, textual_dim_;
  std::vector<double> visual_proj_;   // [visual_dim x channels]
  std::vector<double> textual_proj_;  // [textual_dim x vocab_size]
};

/// Per-category multisets of concatenated cross-modal vectors; a sample with
/// label k contributes both its original and flipped-image variants to set k.
struct ClassFeatureSets {
  int feature_dim = 0;
  std::vector<std::vector<std::vector<double>>> sets;  // [category][member][dim]
};

ClassFeatureSets build_class_feature_sets(const std::vector<Sample>& corpus,
                                          const ToyFeatureExtractor& extractor);

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  std::vector<double> objective_history;  // within-cluster sum of squares per iteration
};

/// Lloyd's iterations from k-means++ seeding. Empty clusters are re-seeded
/// with the point currently farthest from its centroid. The objective is
/// asserted non-increasing across iterations.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iter = 100, double tol = 1e-6);

enum class ProtoProvenance : std::uint8_t { ClusterMean = 0, Fallback = 1, External = 2 };

/// The shared cross-modal prototype memory, [categories x per_category x dim].
struct PrototypeMatrix {
  int num_categories = 0;
  int per_category = 0;
  int dim = 0;
  std::vector<double> values;
  std::vector<ProtoProvenance> provenance;  // one tag per (category, slot)

  double* at(int category, int slot) {
    return values.data() + (static_cast<size_t>(category) * per_category + slot) * dim;
  }
  const double* at(int category, int slot) const {
    return values.data() + (static_cast<size_t>(category) * per_category + slot) * dim;
  }

  /// Learnable view: [(categories*per_category) x dim].
  Tensor to_tensor() const;
  static PrototypeMatrix from_tensor(const Tensor& t, int num_categories, int per_category);

  double cluster_mean_fraction() const;
  /// Throws NumericError on non-finite or exactly-zero prototype vectors.
  void check_valid() const;
};

/// Per-category clustering into per_category prototypes. Categories with no
/// members fall back to seeded small-noise vectors; categories with fewer
/// members than slots cycle their members with additive jitter.
PrototypeMatrix init_prototype_matrix(const ClassFeatureSets& sets, int per_category,
                                      std::uint64_t seed);

/// Random matrix (no clustering) for runs that skip informed initialization.
PrototypeMatrix random_prototype_matrix(int num_categories, int per_category, int dim,
                                        std::uint64_t seed, double stddev = 0.02);

inline constexpr const char* kPrototypeMagic = "XPRO-PM-1";

/// Binary container: magic line, dims, flat f64 data.
void save_prototype_matrix(const PrototypeMatrix& pm, const std::string& path);
PrototypeMatrix load_prototype_matrix(const std::string& path);

/// CSV rows: category, slot, then dim values.
void export_prototype_csv(const PrototypeMatrix& pm, const std::string& path);

}  // namespace xpro
