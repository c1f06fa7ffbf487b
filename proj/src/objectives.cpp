#include "xpro/objectives.hpp"

#include <cmath>

namespace xpro {

void LossConfig::validate() const {
  if (theta <= 0.0) throw ConfigError("loss config: tolerance base theta must be > 0");
  if (alpha < 0.0 || alpha >= 1.0)
    throw ConfigError("loss config: negative margin alpha must lie in [0,1)");
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& gold, int pad_id) {
  if (static_cast<int>(gold.size()) != probs.rows())
    throw ShapeError("cross_entropy: " + std::to_string(gold.size()) + " gold tokens vs " +
                     std::to_string(probs.rows()) + " distributions");
  int live = 0;
  Tensor mask({probs.rows(), 1});
  for (size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pad_id) continue;
    mask.data()[i] = 1.0;
    ++live;
  }
  if (live == 0) throw ContractError("cross_entropy: every gold token is PAD");
  Tensor picked = select_per_row(probs, gold);
  Tensor logp = log(add_scalar(picked, 1e-12));
  return scale(sum_all(mul(logp, mask)), -1.0 / live);
}

ResponseEmbedding response_embedding(const Tensor& responses) {
  if (responses.rows() < 1) throw ContractError("response_embedding: empty response sequence");
  Tensor mean = mean_axis0(responses);
  double norm2 = 0.0;
  for (int j = 0; j < mean.cols(); ++j) norm2 += mean.at(0, j) * mean.at(0, j);
  ResponseEmbedding out;
  out.degenerate = std::sqrt(norm2) < 1e-12;
  out.embedding = l2_normalize_rows(mean);
  return out;
}

double tolerance_term(const std::vector<int>& y_i, const std::vector<int>& y_j, double theta) {
  if (y_i.size() != y_j.size()) throw ShapeError("tolerance_term: label lengths differ");
  int h_d = 0, h_t = 0;
  for (size_t k = 0; k < y_i.size(); ++k) {
    h_d += std::abs(y_i[k] - y_j[k]);
    h_t += y_i[k] + y_j[k];
  }
  if (h_t == 0)
    throw ContractError("tolerance_term: pair shares no active label (h_t = 0)");
  return std::pow(theta, -static_cast<double>(h_d) / h_t);
}

Tensor improved_contrastive(const std::vector<Tensor>& responses,
                            const std::vector<std::vector<int>>& labels, const LossConfig& cfg) {
  cfg.validate();
  const int b = static_cast<int>(responses.size());
  if (b < 1) throw ContractError("improved_contrastive: empty batch");
  if (labels.size() != responses.size())
    throw ShapeError("improved_contrastive: " + std::to_string(labels.size()) + " label rows vs " +
                     std::to_string(responses.size()) + " response sets");

  std::vector<Tensor> embeddings;
  embeddings.reserve(responses.size());
  for (const Tensor& r : responses) embeddings.push_back(response_embedding(r).embedding);
  Tensor stacked = b == 1 ? embeddings[0] : concat_rows(embeddings);
  Tensor sims = matmul(stacked, transpose(stacked));  // [B x B] cosines

  Tensor pos_mask({b, b}), neg_mask({b, b}), tol({b, b});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) {
      int dot = 0;
      for (size_t k = 0; k < labels[static_cast<size_t>(i)].size(); ++k)
        dot += labels[static_cast<size_t>(i)][k] * labels[static_cast<size_t>(j)][k];
      if (dot != 0) {
        pos_mask.at(i, j) = 1.0;
        tol.at(i, j) = cfg.improved
                           ? tolerance_term(labels[static_cast<size_t>(i)],
                                            labels[static_cast<size_t>(j)], cfg.theta)
                           : 1.0;
      } else {
        neg_mask.at(i, j) = 1.0;
      }
    }

  Tensor positive = sub(tol, sims);
  if (cfg.clamp_positive) positive = relu(positive);
  Tensor pos_sum = sum_all(mul(positive, pos_mask));
  Tensor neg_sum = sum_all(mul(relu(add_scalar(sims, -cfg.alpha)), neg_mask));
  return scale(add(pos_sum, neg_sum), 1.0 / (static_cast<double>(b) * b));
}

Tensor total_loss(const Tensor& ce, const Tensor& visual_icn, const Tensor& textual_icn,
                  double lambda, double delta) {
  if (!std::isfinite(ce.value())) throw NumericError("total loss: cross-entropy term is non-finite");
  if (!std::isfinite(visual_icn.value()))
    throw NumericError("total loss: visual contrastive term is non-finite");
  if (!std::isfinite(textual_icn.value()))
    throw NumericError("total loss: textual contrastive term is non-finite");
  return add(ce, add(scale(visual_icn, lambda), scale(textual_icn, delta)));
}

}  // namespace xpro
