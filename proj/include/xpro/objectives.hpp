#pragma once

#include <vector>

#include "xpro/tensor.hpp"

namespace xpro {

struct LossConfig {
  double theta = 1.5;   // tolerance base for positive pairs
  double alpha = 0.4;   // margin below which negative pairs cost nothing
  double lambda = 1.0;  // visual contrastive weight
  double delta = 0.1;   // textual contrastive weight
  bool clamp_positive = false;
  bool improved = true;  // false replaces the tolerance term with 1

  void validate() const;
};

/// Mean negative log-probability of the gold tokens, PAD positions excluded.
/// probs is [T x vocab] with one row per gold token.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& gold, int pad_id);

struct ResponseEmbedding {
  Tensor embedding;  // [1 x d], unit norm unless degenerate
  bool degenerate = false;
};

/// Mean over positions followed by L2 normalization; an all-zero mean maps
/// to the zero vector and is flagged.
ResponseEmbedding response_embedding(const Tensor& responses);

/// theta^(-h_d / h_t) where h_d counts differing labels and h_t the total
/// active labels of the pair. Requires a positive pair (h_t > 0).
double tolerance_term(const std::vector<int>& y_i, const std::vector<int>& y_j, double theta);

/// Multi-label contrastive loss over one batch of per-sample responses
/// (each [N_i x d]). All ordered pairs including i=j contribute: positive
/// pairs (shared label) cost tolerance - cosine, negative pairs cost
/// max(cosine - alpha, 0); the total is scaled by 1/B^2.
Tensor improved_contrastive(const std::vector<Tensor>& responses,
                            const std::vector<std::vector<int>>& labels, const LossConfig& cfg);

/// ce + lambda * visual + delta * textual, with a finite check naming the
/// offending term.
Tensor total_loss(const Tensor& ce, const Tensor& visual_icn, const Tensor& textual_icn,
                  double lambda, double delta);

}  // namespace xpro
