#pragma once

#include <utility>
#include <vector>

#include "xpro/tensor.hpp"

namespace xpro {

/// Learnable weights of the querying / responding / fusion pipeline.
/// Tensors are shared handles into the model's parameter store.
struct ProtoNetParams {
  Tensor w_pv;    // [D x C_P]  candidate projection
  Tensor w_v;     // [C x d]    feature projection (shared by both streams)
  Tensor w_p;     // [C_P x d]  prototype projection
  Tensor w_e;     // [C_P x d]  response transform, per-head partitioned
  Tensor fuse_w;  // [(C+d) x C]
  Tensor fuse_b;  // [C]
};

struct ProtoNetConfig {
  int gamma = 15;
  int heads = 2;
  enum class Normalizer { Softmax, LiteralLinear };
  Normalizer normalizer = Normalizer::Softmax;
  double denom_eps = 1e-8;
};

/// Candidate prototypes allowed by a label mask, with (category, slot)
/// provenance preserved.
struct SelectedCandidates {
  std::vector<int> pm_rows;                         // rows of the PM tensor
  std::vector<std::pair<int, int>> provenance;      // (category, slot)
  int size() const { return static_cast<int>(pm_rows.size()); }
};

struct QueryResult {
  Tensor responses;  // [N x d]
  // Per head, per query position: candidate-list indices in descending
  // similarity order and the matching weights.
  std::vector<std::vector<std::vector<int>>> selected;
  std::vector<std::vector<std::vector<double>>> weights;
};

/// Training labels, except that an all-zero vector falls back to all-ones so
/// the candidate set is never empty.
std::vector<int> label_mask_or_fallback(const std::vector<int>& labels);

/// Concatenation of every masked category's prototype rows, category order
/// preserved. Throws ContractError on an all-zero mask.
SelectedCandidates select_category_prototypes(int num_categories, int per_category,
                                              const std::vector<int>& mask);

/// p = pv W_pv.
Tensor project_candidates(const Tensor& pv, const Tensor& w_pv);

/// The candidate-side projections are independent of the query positions,
/// so one sample computes them once and shares them across the visual and
/// textual streams and across decoding steps.
struct CandidateProjections {
  Tensor p;       // [U x C_P]
  Tensor p_star;  // [U x d]
  Tensor e;       // [U x d]
};
CandidateProjections project_for_query(const Tensor& pv, const ProtoNetParams& params);

/// Scaled similarity between projected features and projected candidates:
/// (features W_v)(p W_p)^T / d. Note the divisor is the projection width
/// itself, not its square root.
Tensor query(const Tensor& features, const Tensor& p, const Tensor& w_v, const Tensor& w_p);

/// Per-row top-gamma indices of a similarity matrix, descending, ties broken
/// toward the lower candidate index. gamma is clamped to the row width.
std::vector<std::vector<int>> topk_rows(const Tensor& sims, int gamma);

/// Weights over the top-gamma candidates of each row (softmax by default,
/// or the literal linear ratio with a guarded denominator), then responses
/// r_i = sum_j w_ij e_ij over the transformed candidates e.
QueryResult topk_respond(const Tensor& sims, const Tensor& transformed, int gamma,
                         ProtoNetConfig::Normalizer normalizer, double denom_eps = 1e-8);

/// Full multi-head pipeline: project, per-head similarity / top-gamma /
/// response, concatenate heads. With one head this equals
/// topk_respond(query(...), ...) exactly.
QueryResult query_respond(const Tensor& features, const Tensor& pv,
                          const ProtoNetParams& params, const ProtoNetConfig& cfg);

/// Same pipeline over precomputed candidate projections.
QueryResult query_respond(const Tensor& features, const CandidateProjections& proj,
                          const ProtoNetParams& params, const ProtoNetConfig& cfg);

/// Linear fusion of each position's feature with its response.
Tensor fuse(const Tensor& features, const Tensor& responses, const ProtoNetParams& params);

}  // namespace xpro
