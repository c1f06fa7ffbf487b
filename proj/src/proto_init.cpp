#include "xpro/proto_init.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

namespace xpro {

ToyFeatureExtractor::ToyFeatureExtractor(int channels, int vocab_size, int visual_dim,
                                         int textual_dim, std::uint64_t seed)
    : channels_(channels),
      vocab_size_(vocab_size),
      visual_dim_(visual_dim),
      textual_dim_(textual_dim) {
  std::mt19937_64 rng(mix_seed(seed, 0xfea7));
  std::normal_distribution<double> dist(0.0, 1.0);
  const double vis_scale = 1.0 / std::sqrt(static_cast<double>(channels));
  visual_proj_.resize(static_cast<size_t>(visual_dim) * channels);
  for (double& w : visual_proj_) w = dist(rng) * vis_scale;
  const double txt_scale = 1.0 / std::sqrt(static_cast<double>(vocab_size));
  textual_proj_.resize(static_cast<size_t>(textual_dim) * vocab_size);
  for (double& w : textual_proj_) w = dist(rng) * txt_scale;
}

GlobalFeatures ToyFeatureExtractor::extract(const Sample& s) const {
  if (s.channels != channels_)
    throw ShapeError("extractor: sample has " + std::to_string(s.channels) +
                     " channels, expected " + std::to_string(channels_));
  auto mean_patch = [&](const Sample& sample) {
    std::vector<double> mean(static_cast<size_t>(channels_), 0.0);
    const int n = sample.num_patches();
    for (int p = 0; p < n; ++p)
      for (int ch = 0; ch < channels_; ++ch)
        mean[static_cast<size_t>(ch)] += sample.image[static_cast<size_t>(p) * channels_ + ch];
    for (double& v : mean) v /= n;
    return mean;
  };
  auto project = [](const std::vector<double>& proj, const std::vector<double>& x, int rows) {
    const int cols = static_cast<int>(x.size());
    std::vector<double> out(static_cast<size_t>(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < cols; ++j) sum += proj[static_cast<size_t>(i) * cols + j] * x[static_cast<size_t>(j)];
      out[static_cast<size_t>(i)] = sum;
    }
    return out;
  };

  GlobalFeatures f;
  f.visual = project(visual_proj_, mean_patch(s), visual_dim_);
  f.visual_flipped = project(visual_proj_, mean_patch(flip_image(s)), visual_dim_);
  std::vector<double> bow(static_cast<size_t>(vocab_size_), 0.0);
  for (int id : s.report) {
    if (id < 0 || id >= vocab_size_)
      throw ContractError("extractor: report token " + std::to_string(id) +
                          " outside vocabulary of size " + std::to_string(vocab_size_));
    bow[static_cast<size_t>(id)] += 1.0;
  }
  f.textual = project(textual_proj_, bow, textual_dim_);
  return f;
}

ClassFeatureSets build_class_feature_sets(const std::vector<Sample>& corpus,
                                          const ToyFeatureExtractor& extractor) {
  ClassFeatureSets out;
  out.feature_dim = extractor.feature_dim();
  for (const Sample& s : corpus) {
    if (out.sets.empty()) out.sets.resize(s.labels.size());
    if (out.sets.size() != s.labels.size())
      throw ContractError("class feature sets: inconsistent label lengths in corpus");
    bool any = false;
    for (int b : s.labels) any = any || b == 1;
    if (!any) continue;
    const GlobalFeatures f = extractor.extract(s);
    std::vector<double> original(f.visual);
    original.insert(original.end(), f.textual.begin(), f.textual.end());
    std::vector<double> flipped(f.visual_flipped);
    flipped.insert(flipped.end(), f.textual.begin(), f.textual.end());
    for (size_t k = 0; k < s.labels.size(); ++k) {
      if (!s.labels[k]) continue;
      out.sets[k].push_back(original);
      out.sets[k].push_back(flipped);
    }
  }
  return out;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iter, double tol) {
  if (k < 1) throw ContractError("kmeans: k must be >= 1");
  if (points.empty()) throw ContractError("kmeans: no points");
  if (static_cast<size_t>(k) > points.size())
    throw ContractError("kmeans: k exceeds the number of points");
  const int n = static_cast<int>(points.size());
  const size_t dim = points[0].size();
  std::mt19937_64 rng(mix_seed(seed, 0x4b3a));

  // k-means++ seeding
  KMeansResult res;
  std::uniform_int_distribution<int> uniform(0, n - 1);
  res.centroids.push_back(points[static_cast<size_t>(uniform(rng))]);
  std::vector<double> best_d2(static_cast<size_t>(n), 0.0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d2 = std::numeric_limits<double>::infinity();
      for (const auto& cen : res.centroids) d2 = std::min(d2, sq_dist(points[static_cast<size_t>(i)], cen));
      best_d2[static_cast<size_t>(i)] = d2;
      total += d2;
    }
    int chosen;
    if (total > 0.0) {
      std::uniform_real_distribution<double> pickr(0.0, total);
      double target = pickr(rng), cum = 0.0;
      chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        cum += best_d2[static_cast<size_t>(i)];
        if (cum >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = uniform(rng);  // all points coincide with some centroid
    }
    res.centroids.push_back(points[static_cast<size_t>(chosen)]);
  }

  res.assignments.assign(static_cast<size_t>(n), 0);
  std::vector<std::vector<double>> prev = res.centroids;
  for (int iter = 0; iter < max_iter; ++iter) {
    // assign (ties to the lowest centroid index)
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d2 = sq_dist(points[static_cast<size_t>(i)], res.centroids[static_cast<size_t>(c)]);
        if (d2 < best) {
          best = d2;
          arg = c;
        }
      }
      res.assignments[static_cast<size_t>(i)] = arg;
    }

    // re-seed empty clusters with the point farthest from its own centroid,
    // never emptying another cluster below one member
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (int a : res.assignments) counts[static_cast<size_t>(a)]++;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) continue;
      double far = -1.0;
      int far_i = -1;
      for (int i = 0; i < n; ++i) {
        const int owner = res.assignments[static_cast<size_t>(i)];
        if (counts[static_cast<size_t>(owner)] <= 1) continue;
        const double d2 = sq_dist(points[static_cast<size_t>(i)], res.centroids[static_cast<size_t>(owner)]);
        if (d2 > far) {
          far = d2;
          far_i = i;
        }
      }
      if (far_i < 0) continue;
      counts[static_cast<size_t>(res.assignments[static_cast<size_t>(far_i)])]--;
      res.assignments[static_cast<size_t>(far_i)] = c;
      counts[static_cast<size_t>(c)] = 1;
      res.centroids[static_cast<size_t>(c)] = points[static_cast<size_t>(far_i)];
    }

    // update centroids to cluster means
    for (auto& cen : res.centroids) std::fill(cen.begin(), cen.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      const int c = res.assignments[static_cast<size_t>(i)];
      counts[static_cast<size_t>(c)]++;
      for (size_t d = 0; d < dim; ++d)
        res.centroids[static_cast<size_t>(c)][d] += points[static_cast<size_t>(i)][d];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<size_t>(c)] > 0)
        for (size_t d = 0; d < dim; ++d)
          res.centroids[static_cast<size_t>(c)][d] /= counts[static_cast<size_t>(c)];

    // objective after the update; must never increase
    double wcss = 0.0;
    for (int i = 0; i < n; ++i)
      wcss += sq_dist(points[static_cast<size_t>(i)],
                      res.centroids[static_cast<size_t>(res.assignments[static_cast<size_t>(i)])]);
    if (!res.objective_history.empty() && wcss > res.objective_history.back() + 1e-9)
      throw NumericError("kmeans: objective increased from " +
                         std::to_string(res.objective_history.back()) + " to " +
                         std::to_string(wcss));
    res.objective_history.push_back(wcss);

    double moved = 0.0;
    for (int c = 0; c < k; ++c)
      moved = std::max(moved, sq_dist(prev[static_cast<size_t>(c)], res.centroids[static_cast<size_t>(c)]));
    prev = res.centroids;
    if (std::sqrt(moved) < tol) break;
  }
  return res;
}

Tensor PrototypeMatrix::to_tensor() const {
  return Tensor({num_categories * per_category, dim}, values);
}

PrototypeMatrix PrototypeMatrix::from_tensor(const Tensor& t, int num_categories,
                                             int per_category) {
  if (t.rank() != 2 || t.rows() != num_categories * per_category)
    throw ShapeError("prototype matrix: tensor " + shape_str(t.shape()) +
                     " does not hold " + std::to_string(num_categories) + "x" +
                     std::to_string(per_category) + " prototypes");
  PrototypeMatrix pm;
  pm.num_categories = num_categories;
  pm.per_category = per_category;
  pm.dim = t.cols();
  pm.values = t.vec();
  pm.provenance.assign(static_cast<size_t>(num_categories) * per_category,
                       ProtoProvenance::External);
  return pm;
}

double PrototypeMatrix::cluster_mean_fraction() const {
  if (provenance.empty()) return 0.0;
  size_t n = 0;
  for (auto p : provenance)
    if (p == ProtoProvenance::ClusterMean) ++n;
  return static_cast<double>(n) / static_cast<double>(provenance.size());
}

void PrototypeMatrix::check_valid() const {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("prototype matrix: non-finite entry");
  for (int k = 0; k < num_categories; ++k)
    for (int i = 0; i < per_category; ++i) {
      const double* row = at(k, i);
      bool all_zero = true;
      for (int d = 0; d < dim; ++d) all_zero = all_zero && row[d] == 0.0;
      if (all_zero)
        throw NumericError("prototype matrix: zero vector at category " + std::to_string(k) +
                           " slot " + std::to_string(i));
    }
}

PrototypeMatrix init_prototype_matrix(const ClassFeatureSets& sets, int per_category,
                                      std::uint64_t seed) {
  if (per_category < 1) throw ContractError("prototype init: per_category must be >= 1");
  PrototypeMatrix pm;
  pm.num_categories = static_cast<int>(sets.sets.size());
  pm.per_category = per_category;
  pm.dim = sets.feature_dim;
  pm.values.assign(static_cast<size_t>(pm.num_categories) * per_category * pm.dim, 0.0);
  pm.provenance.assign(static_cast<size_t>(pm.num_categories) * per_category,
                       ProtoProvenance::Fallback);

  for (int k = 0; k < pm.num_categories; ++k) {
    const auto& members = sets.sets[static_cast<size_t>(k)];
    std::mt19937_64 rng(mix_seed(seed, 0xf0ULL + static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> jitter(0.0, 0.01);
    if (members.empty()) {
      for (int i = 0; i < per_category; ++i)
        for (int d = 0; d < pm.dim; ++d) pm.at(k, i)[d] = jitter(rng);
      continue;
    }
    if (static_cast<int>(members.size()) < per_category) {
      for (int i = 0; i < per_category; ++i) {
        const auto& src = members[static_cast<size_t>(i) % members.size()];
        for (int d = 0; d < pm.dim; ++d) pm.at(k, i)[d] = src[static_cast<size_t>(d)] + jitter(rng);
      }
      continue;
    }
    KMeansResult km = kmeans(members, per_category, mix_seed(seed, 0xc1u + static_cast<std::uint64_t>(k)));
    for (int i = 0; i < per_category; ++i) {
      for (int d = 0; d < pm.dim; ++d) pm.at(k, i)[d] = km.centroids[static_cast<size_t>(i)][static_cast<size_t>(d)];
      pm.provenance[static_cast<size_t>(k) * per_category + static_cast<size_t>(i)] =
          ProtoProvenance::ClusterMean;
    }
  }
  pm.check_valid();
  return pm;
}

PrototypeMatrix random_prototype_matrix(int num_categories, int per_category, int dim,
                                        std::uint64_t seed, double stddev) {
  PrototypeMatrix pm;
  pm.num_categories = num_categories;
  pm.per_category = per_category;
  pm.dim = dim;
  pm.values.resize(static_cast<size_t>(num_categories) * per_category * dim);
  pm.provenance.assign(static_cast<size_t>(num_categories) * per_category,
                       ProtoProvenance::Fallback);
  std::mt19937_64 rng(mix_seed(seed, 0x9a7d));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : pm.values) v = dist(rng);
  pm.check_valid();
  return pm;
}

namespace {

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_prototype_matrix(const PrototypeMatrix& pm, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("prototype matrix: cannot open " + path + " for writing");
  out << kPrototypeMagic << '\n';
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(pm.num_categories));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(pm.per_category));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(pm.dim));
  out.write(reinterpret_cast<const char*>(pm.values.data()),
            static_cast<std::streamsize>(sizeof(double) * pm.values.size()));
  if (!out) throw DataError("prototype matrix: write failed for " + path);
}

PrototypeMatrix load_prototype_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("prototype matrix: cannot open " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kPrototypeMagic)
    throw DataError("prototype matrix " + path + ": bad magic '" + magic + "'");
  std::uint64_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw DataError("prototype matrix " + path + ": truncated header");
  PrototypeMatrix pm;
  pm.num_categories = static_cast<int>(dims[0]);
  pm.per_category = static_cast<int>(dims[1]);
  pm.dim = static_cast<int>(dims[2]);
  pm.values.resize(static_cast<size_t>(pm.num_categories) * pm.per_category * pm.dim);
  in.read(reinterpret_cast<char*>(pm.values.data()),
          static_cast<std::streamsize>(sizeof(double) * pm.values.size()));
  if (!in) throw DataError("prototype matrix " + path + ": truncated data");
  pm.provenance.assign(static_cast<size_t>(pm.num_categories) * pm.per_category,
                       ProtoProvenance::External);
  return pm;
}

void export_prototype_csv(const PrototypeMatrix& pm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("prototype csv: cannot open " + path + " for writing");
  out << "category,slot";
  for (int d = 0; d < pm.dim; ++d) out << ",d" << d;
  out << '\n';
  char buf[32];
  for (int k = 0; k < pm.num_categories; ++k)
    for (int i = 0; i < pm.per_category; ++i) {
      out << k << ',' << i;
      for (int d = 0; d < pm.dim; ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", pm.at(k, i)[d]);
        out << ',' << buf;
      }
      out << '\n';
    }
  if (!out) throw DataError("prototype csv: write failed for " + path);
}

}  // namespace xpro
