#include "xpro/proto_net.hpp"

#include <algorithm>
#include <numeric>

namespace xpro {

std::vector<int> label_mask_or_fallback(const std::vector<int>& labels) {
  for (int b : labels)
    if (b != 0) return labels;
  return std::vector<int>(labels.size(), 1);
}

SelectedCandidates select_category_prototypes(int num_categories, int per_category,
                                              const std::vector<int>& mask) {
  if (static_cast<int>(mask.size()) != num_categories)
    throw ShapeError("select_category_prototypes: mask length " + std::to_string(mask.size()) +
                     " vs " + std::to_string(num_categories) + " categories");
  SelectedCandidates out;
  for (int k = 0; k < num_categories; ++k) {
    if (!mask[static_cast<size_t>(k)]) continue;
    for (int i = 0; i < per_category; ++i) {
      out.pm_rows.push_back(k * per_category + i);
      out.provenance.emplace_back(k, i);
    }
  }
  if (out.pm_rows.empty())
    throw ContractError("select_category_prototypes: empty label mask");
  return out;
}

Tensor project_candidates(const Tensor& pv, const Tensor& w_pv) { return matmul(pv, w_pv); }

Tensor query(const Tensor& features, const Tensor& p, const Tensor& w_v, const Tensor& w_p) {
  Tensor v_star = matmul(features, w_v);
  Tensor p_star = matmul(p, w_p);
  const int d = v_star.cols();
  return scale(matmul(v_star, transpose(p_star)), 1.0 / d);
}

std::vector<std::vector<int>> topk_rows(const Tensor& sims, int gamma) {
  if (gamma < 1) throw ContractError("topk_rows: gamma must be >= 1");
  const int n = sims.rows(), u = sims.cols();
  const int g = std::min(gamma, u);
  std::vector<std::vector<int>> out(static_cast<size_t>(n));
  std::vector<int> idx(static_cast<size_t>(u));
  for (int i = 0; i < n; ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    const double* row = sims.data() + static_cast<size_t>(i) * u;
    std::partial_sort(idx.begin(), idx.begin() + g, idx.end(), [row](int a, int b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    out[static_cast<size_t>(i)].assign(idx.begin(), idx.begin() + g);
  }
  return out;
}

namespace {

/// Shared core: selection mask -> weights -> weighted sum of transformed
/// candidates. Non-selected weights are exactly zero in both modes.
QueryResult respond_with_selection(const Tensor& sims, const Tensor& transformed, int gamma,
                                   ProtoNetConfig::Normalizer normalizer, double denom_eps) {
  const int n = sims.rows(), u = sims.cols();
  if (transformed.rows() != u)
    throw ShapeError("topk_respond: " + std::to_string(u) + " candidates vs " +
                     std::to_string(transformed.rows()) + " transformed rows");
  auto selected = topk_rows(sims, gamma);

  Tensor weights;
  if (normalizer == ProtoNetConfig::Normalizer::Softmax) {
    Tensor mask({n, u});
    std::fill(mask.vec().begin(), mask.vec().end(), -1e9);
    for (int i = 0; i < n; ++i)
      for (int j : selected[static_cast<size_t>(i)]) mask.at(i, j) = 0.0;
    weights = softmax_rows(add(sims, mask));
  } else {
    Tensor pick({n, u});
    for (int i = 0; i < n; ++i)
      for (int j : selected[static_cast<size_t>(i)]) pick.at(i, j) = 1.0;
    Tensor numer = mul(sims, pick);
    Tensor denom = sign_guard(sum_axis1(numer), denom_eps);
    weights = div_colvec(numer, denom);
  }

  QueryResult res;
  res.responses = matmul(weights, transformed);
  res.selected.push_back(selected);
  auto& w_out = res.weights.emplace_back();
  for (int i = 0; i < n; ++i) {
    auto& row = w_out.emplace_back();
    for (int j : selected[static_cast<size_t>(i)]) row.push_back(weights.at(i, j));
  }
  return res;
}

}  // namespace

QueryResult topk_respond(const Tensor& sims, const Tensor& transformed, int gamma,
                         ProtoNetConfig::Normalizer normalizer, double denom_eps) {
  return respond_with_selection(sims, transformed, gamma, normalizer, denom_eps);
}

CandidateProjections project_for_query(const Tensor& pv, const ProtoNetParams& params) {
  if (pv.rows() < 1) throw ContractError("query_respond: empty candidate list");
  CandidateProjections proj;
  proj.p = project_candidates(pv, params.w_pv);
  proj.p_star = matmul(proj.p, params.w_p);
  proj.e = matmul(proj.p, params.w_e);
  return proj;
}

QueryResult query_respond(const Tensor& features, const Tensor& pv,
                          const ProtoNetParams& params, const ProtoNetConfig& cfg) {
  return query_respond(features, project_for_query(pv, params), params, cfg);
}

QueryResult query_respond(const Tensor& features, const CandidateProjections& proj,
                          const ProtoNetParams& params, const ProtoNetConfig& cfg) {
  Tensor v_star = matmul(features, params.w_v);
  const Tensor& p_star = proj.p_star;
  const Tensor& e = proj.e;
  const int d = v_star.cols();
  if (cfg.heads < 1 || d % cfg.heads != 0)
    throw ContractError("query_respond: query width " + std::to_string(d) +
                        " is not divisible into " + std::to_string(cfg.heads) + " heads");
  const int head_dim = d / cfg.heads;

  QueryResult out;
  std::vector<Tensor> head_responses;
  for (int h = 0; h < cfg.heads; ++h) {
    const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
    Tensor vh = slice_cols(v_star, c0, c1);
    Tensor ph = slice_cols(p_star, c0, c1);
    Tensor eh = slice_cols(e, c0, c1);
    Tensor sims = scale(matmul(vh, transpose(ph)), 1.0 / head_dim);
    QueryResult head = respond_with_selection(sims, eh, cfg.gamma, cfg.normalizer, cfg.denom_eps);
    head_responses.push_back(head.responses);
    out.selected.push_back(std::move(head.selected[0]));
    out.weights.push_back(std::move(head.weights[0]));
  }
  out.responses = cfg.heads == 1 ? head_responses[0] : concat_cols(head_responses);
  return out;
}

Tensor fuse(const Tensor& features, const Tensor& responses, const ProtoNetParams& params) {
  if (features.rows() != responses.rows())
    throw ShapeError("fuse: sequence lengths differ, " + shape_str(features.shape()) + " vs " +
                     shape_str(responses.shape()));
  return linear(concat_cols({features, responses}), params.fuse_w, params.fuse_b);
}

}  // namespace xpro
