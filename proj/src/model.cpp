#include "xpro/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace xpro {

ParamGroup param_group_for(const std::string& name) {
  if (name == "pm" || name.rfind("proto.", 0) == 0 || name.rfind("fuse.", 0) == 0)
    return ParamGroup::Prototype;
  return ParamGroup::EncoderDecoder;
}

namespace {

Tensor xavier(Shape shape, std::mt19937_64& rng) {
  const double fan_in = shape[0], fan_out = shape[1];
  return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / (fan_in + fan_out)));
}

}  // namespace

XproModel::XproModel(const RunConfig& cfg, int vocab_size, const PrototypeMatrix* pm)
    : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x90de1));
  init_seq_params(store_, cfg_.model_config(vocab_size), rng);
  if (uses_prototypes()) {
    if (!pm) throw ContractError("model: prototype matrix required unless the network is disabled");
    if (pm->num_categories != cfg_.num_categories || pm->per_category != cfg_.prototypes_per_category ||
        pm->dim != cfg_.feature_dim())
      throw ConfigError("model: prototype matrix " + std::to_string(pm->num_categories) + "x" +
                        std::to_string(pm->per_category) + "x" + std::to_string(pm->dim) +
                        " does not match the config");
    store_.add("pm", pm->to_tensor(), ParamGroup::Prototype);
    store_.add("proto.w_pv", xavier({cfg_.feature_dim(), cfg_.proto_proj_dim}, rng),
               ParamGroup::Prototype);
    store_.add("proto.w_v", xavier({cfg_.channels, cfg_.query_dim}, rng), ParamGroup::Prototype);
    store_.add("proto.w_p", xavier({cfg_.proto_proj_dim, cfg_.query_dim}, rng),
               ParamGroup::Prototype);
    store_.add("proto.w_e", xavier({cfg_.proto_proj_dim, cfg_.query_dim}, rng),
               ParamGroup::Prototype);
    store_.add("fuse.w", xavier({cfg_.channels + cfg_.query_dim, cfg_.channels}, rng),
               ParamGroup::Prototype);
    store_.add("fuse.b", Tensor::zeros({cfg_.channels}), ParamGroup::Prototype);
  }
  transformer_ = std::make_unique<Transformer>(cfg_.model_config(vocab_size), store_);
}

XproModel::XproModel(const RunConfig& cfg, int vocab_size, ParamStore store)
    : cfg_(cfg), vocab_size_(vocab_size), store_(std::move(store)) {
  cfg_.validate();
  if (uses_prototypes() && !store_.has("pm"))
    throw DataError("model: checkpoint has no prototype memory but the config expects one");
  transformer_ = std::make_unique<Transformer>(cfg_.model_config(vocab_size), store_);
}

Tensor XproModel::patch_features(const Sample& s) const {
  if (s.channels != cfg_.channels)
    throw DataError("model: sample '" + s.id + "' has " + std::to_string(s.channels) +
                    " channels, config expects " + std::to_string(cfg_.channels));
  return Tensor({s.num_patches(), s.channels}, s.image);
}

std::vector<int> XproModel::inference_mask(const Sample& s, const GenOptions& opt) const {
  const std::string mode = opt.label_mode.value_or(cfg_.inference_label_mode);
  if (mode == "oracle") return label_mask_or_fallback(s.labels);
  return std::vector<int>(static_cast<size_t>(cfg_.num_categories), 1);
}

Tensor XproModel::candidate_rows(const std::vector<int>& mask, SelectedCandidates* out) const {
  SelectedCandidates cands =
      select_category_prototypes(cfg_.num_categories, cfg_.prototypes_per_category, mask);
  Tensor pv = gather_rows(store_.get("pm"), cands.pm_rows);
  if (out) *out = std::move(cands);
  return pv;
}

ProtoNetParams XproModel::proto_params() const {
  return ProtoNetParams{store_.get("proto.w_pv"), store_.get("proto.w_v"),
                        store_.get("proto.w_p"), store_.get("proto.w_e"),
                        store_.get("fuse.w"),    store_.get("fuse.b")};
}

XproModel::SampleLoss XproModel::forward_sample(const Sample& s, std::mt19937_64* drop_rng,
                                                bool train) {
  if (static_cast<int>(s.labels.size()) != cfg_.num_categories)
    throw DataError("model: sample '" + s.id + "' has " + std::to_string(s.labels.size()) +
                    " labels, config expects " + std::to_string(cfg_.num_categories));
  if (s.report.size() < 2)
    throw DataError("model: sample '" + s.id + "' has no report to teacher-force");

  Tensor v_s = patch_features(s);
  SampleLoss out;
  Tensor l_s = v_s;
  CandidateProjections proj;
  ProtoNetParams pp;
  if (uses_prototypes()) {
    pp = proto_params();
    const auto mask = label_mask_or_fallback(s.labels);
    proj = project_for_query(candidate_rows(mask, nullptr), pp);
    QueryResult qr = query_respond(v_s, proj, pp, cfg_.proto_config());
    out.visual_responses = qr.responses;
    l_s = fuse(v_s, qr.responses, pp);
  }
  Tensor memory = transformer_->encode(l_s, drop_rng, train);

  const std::vector<int> input(s.report.begin(), s.report.end() - 1);
  const std::vector<int> gold(s.report.begin() + 1, s.report.end());
  Tensor v_t = transformer_->embed_report(input);
  Tensor l_t = v_t;
  if (uses_prototypes()) {
    QueryResult qr = query_respond(v_t, proj, pp, cfg_.proto_config());
    out.textual_responses = qr.responses;
    l_t = fuse(v_t, qr.responses, pp);
    out.has_responses = true;
  }
  Tensor probs = transformer_->decode(memory, l_t, drop_rng, train);
  out.ce = cross_entropy(probs, gold, Vocabulary::kPad);
  return out;
}

XproModel::BatchLoss XproModel::forward_batch(std::span<const Sample> batch,
                                              std::mt19937_64* drop_rng, bool train) {
  if (batch.empty()) throw ContractError("forward_batch: empty batch");
  Tensor ce_sum;
  std::vector<Tensor> visual, textual;
  std::vector<std::vector<int>> labels;
  for (const Sample& s : batch) {
    SampleLoss one = forward_sample(s, drop_rng, train);
    ce_sum = ce_sum.numel() == 0 ? one.ce : add(ce_sum, one.ce);
    if (one.has_responses) {
      visual.push_back(one.visual_responses);
      textual.push_back(one.textual_responses);
      labels.push_back(s.labels);
    }
  }
  BatchLoss out;
  out.ce = scale(ce_sum, 1.0 / static_cast<double>(batch.size()));
  if (!visual.empty()) {
    const LossConfig lc = cfg_.loss_config();
    out.visual_icn = improved_contrastive(visual, labels, lc);
    out.textual_icn = improved_contrastive(textual, labels, lc);
  } else {
    out.visual_icn = Tensor::scalar(0.0);
    out.textual_icn = Tensor::scalar(0.0);
  }
  out.total = total_loss(out.ce, out.visual_icn, out.textual_icn, cfg_.visual_loss_weight,
                         cfg_.textual_loss_weight);
  return out;
}

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;

  double score(bool length_normalize) const {
    const double len = static_cast<double>(tokens.size()) - 1.0;  // generated tokens
    if (!length_normalize || len < 1.0) return log_prob;
    return log_prob / len;
  }
};

bool better(const Hypothesis& a, const Hypothesis& b, bool length_normalize) {
  const double sa = a.score(length_normalize), sb = b.score(length_normalize);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;  // lexicographic tie break
}

}  // namespace

GenOutput XproModel::generate(const Sample& s, const GenOptions& opt) const {
  if (opt.beam_size < 1) throw ContractError("generate: beam_size must be >= 1");
  Tensor v_s = patch_features(s);
  Tensor l_s = v_s;
  CandidateProjections proj;
  ProtoNetParams pp;
  const bool proto = uses_prototypes();
  if (proto) {
    pp = proto_params();
    proj = project_for_query(candidate_rows(inference_mask(s, opt), nullptr), pp);
    QueryResult qr = query_respond(v_s, proj, pp, cfg_.proto_config());
    l_s = fuse(v_s, qr.responses, pp);
  }
  Tensor memory = transformer_->encode(l_s, nullptr, false);

  auto next_log_probs = [&](const std::vector<int>& prefix) {
    Tensor v_t = transformer_->embed_report(prefix);
    Tensor l_t = v_t;
    if (proto) {
      QueryResult qr = query_respond(v_t, proj, pp, cfg_.proto_config());
      l_t = fuse(v_t, qr.responses, pp);
    }
    Tensor probs = transformer_->decode(memory, l_t, nullptr, false);
    const int last = probs.rows() - 1;
    std::vector<double> logp(static_cast<size_t>(vocab_size_));
    for (int j = 0; j < vocab_size_; ++j)
      logp[static_cast<size_t>(j)] = std::log(probs.at(last, j) + 1e-12);
    return logp;
  };

  auto beam_rollout = [&](int beam_size) {
    std::vector<Hypothesis> beam = {Hypothesis{{Vocabulary::kBos}, 0.0, false}};
    for (int step = 1; step < cfg_.max_len; ++step) {
      bool all_done = true;
      std::vector<Hypothesis> candidates;
      for (const Hypothesis& hyp : beam) {
        if (hyp.finished) {
          candidates.push_back(hyp);
          continue;
        }
        all_done = false;
        const auto logp = next_log_probs(hyp.tokens);
        std::vector<int> order(static_cast<size_t>(vocab_size_));
        for (int j = 0; j < vocab_size_; ++j) order[static_cast<size_t>(j)] = j;
        const int expand = std::min(beam_size, vocab_size_);
        std::partial_sort(order.begin(), order.begin() + expand, order.end(),
                          [&](int a, int b) {
                            if (logp[static_cast<size_t>(a)] != logp[static_cast<size_t>(b)])
                              return logp[static_cast<size_t>(a)] > logp[static_cast<size_t>(b)];
                            return a < b;
                          });
        for (int e = 0; e < expand; ++e) {
          Hypothesis next = hyp;
          const int tok = order[static_cast<size_t>(e)];
          next.tokens.push_back(tok);
          next.log_prob += logp[static_cast<size_t>(tok)];
          next.finished = tok == Vocabulary::kEos ||
                          static_cast<int>(next.tokens.size()) >= cfg_.max_len;
          candidates.push_back(std::move(next));
        }
      }
      if (all_done) break;
      std::sort(candidates.begin(), candidates.end(),
                [&](const Hypothesis& a, const Hypothesis& b) {
                  return better(a, b, opt.length_normalize);
                });
      if (static_cast<int>(candidates.size()) > beam_size)
        candidates.resize(static_cast<size_t>(beam_size));
      beam = std::move(candidates);
    }
    Hypothesis best = beam[0];
    for (const Hypothesis& hyp : beam)
      if (better(hyp, best, opt.length_normalize)) best = hyp;
    return best;
  };

  Hypothesis best = beam_rollout(opt.beam_size);
  if (opt.beam_size > 1) {
    // beam pruning may drop the greedy lineage on near-flat distributions;
    // the search never returns a hypothesis the greedy rollout beats
    Hypothesis greedy = beam_rollout(1);
    if (better(greedy, best, opt.length_normalize)) best = greedy;
  }
  return GenOutput{best.tokens, best.log_prob};
}

namespace {

std::vector<std::vector<SelectedPrototype>> map_selection(
    const QueryResult& qr, int position, const SelectedCandidates& cands) {
  std::vector<std::vector<SelectedPrototype>> heads;
  for (size_t h = 0; h < qr.selected.size(); ++h) {
    auto& head = heads.emplace_back();
    const auto& idx = qr.selected[h][static_cast<size_t>(position)];
    const auto& w = qr.weights[h][static_cast<size_t>(position)];
    for (size_t g = 0; g < idx.size(); ++g) {
      const auto [cat, slot] = cands.provenance[static_cast<size_t>(idx[g])];
      head.push_back(SelectedPrototype{cat, slot, w[g]});
    }
  }
  return heads;
}

std::set<std::pair<int, int>> selection_set(const std::vector<std::vector<SelectedPrototype>>& heads) {
  std::set<std::pair<int, int>> out;
  for (const auto& head : heads)
    for (const auto& sel : head) out.insert({sel.category, sel.slot});
  return out;
}

}  // namespace

InspectResult XproModel::inspect(const Sample& s, const GenOptions& opt) const {
  if (!uses_prototypes())
    throw ContractError("inspect: the prototype network is disabled in this config");
  InspectResult res;
  res.generated = generate(s, opt);

  ProtoNetParams pp = proto_params();
  SelectedCandidates cands;
  CandidateProjections proj = project_for_query(candidate_rows(inference_mask(s, opt), &cands), pp);
  Tensor v_s = patch_features(s);
  QueryResult vis = query_respond(v_s, proj, pp, cfg_.proto_config());
  for (int p = 0; p < v_s.rows(); ++p)
    res.patches.push_back(InspectPatch{p, map_selection(vis, p, cands)});
  Tensor l_s = fuse(v_s, vis.responses, pp);
  Tensor memory = transformer_->encode(l_s, nullptr, false);

  // re-run the full generated sequence once to trace the cross-attention
  std::vector<int> prefix = res.generated.tokens;
  if (prefix.size() > 1 && prefix.back() == Vocabulary::kEos) prefix.pop_back();
  Tensor v_t = transformer_->embed_report(prefix);
  QueryResult txt = query_respond(v_t, proj, pp, cfg_.proto_config());
  Tensor l_t = fuse(v_t, txt.responses, pp);
  Tensor trace;
  transformer_->decode(memory, l_t, nullptr, false, &trace);

  for (int t = 0; t < v_t.rows(); ++t) {
    InspectToken tok;
    tok.step = t;
    tok.token = prefix[static_cast<size_t>(t)];
    tok.heads = map_selection(txt, t, cands);
    int best_patch = 0;
    for (int p2 = 1; p2 < trace.cols(); ++p2)
      if (trace.at(t, p2) > trace.at(t, best_patch)) best_patch = p2;
    tok.aligned_patch = best_patch;
    const auto token_set = selection_set(tok.heads);
    const auto patch_set = selection_set(res.patches[static_cast<size_t>(best_patch)].heads);
    int overlap = 0;
    for (const auto& kv : token_set) overlap += patch_set.count(kv) ? 1 : 0;
    tok.overlap = overlap;
    res.tokens.push_back(std::move(tok));
  }
  return res;
}

}  // namespace xpro
