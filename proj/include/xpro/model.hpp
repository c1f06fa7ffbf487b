#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>

#include "xpro/config.hpp"
#include "xpro/corpus.hpp"
#include "xpro/objectives.hpp"
#include "xpro/proto_init.hpp"
#include "xpro/proto_net.hpp"
#include "xpro/seq_model.hpp"

namespace xpro {

struct GenOptions {
  int beam_size = 3;
  bool length_normalize = true;
  // overrides the config's inference_label_mode when set
  std::optional<std::string> label_mode;
};

struct GenOutput {
  std::vector<int> tokens;  // BOS ... (EOS unless cut off at max_len)
  double log_prob = 0.0;    // sum of token log-probabilities
};

/// One selected prototype of one query position.
struct SelectedPrototype {
  int category = 0;
  int slot = 0;
  double weight = 0.0;
};

struct InspectPatch {
  int patch = 0;
  std::vector<std::vector<SelectedPrototype>> heads;
};

struct InspectToken {
  int step = 0;
  int token = 0;
  int aligned_patch = 0;
  int overlap = 0;  // shared (category, slot) picks with the aligned patch
  std::vector<std::vector<SelectedPrototype>> heads;
};

struct InspectResult {
  GenOutput generated;
  std::vector<InspectPatch> patches;
  std::vector<InspectToken> tokens;
};

/// The full pipeline: patch features -> class-related prototype querying /
/// responding -> fusion -> transformer encoder-decoder. With the prototype
/// network disabled, raw features feed the transformer directly and no
/// contrastive terms exist.
class XproModel {
 public:
  /// Fresh parameters; `pm` seeds the prototype memory and must be present
  /// unless the config disables the prototype network.
  XproModel(const RunConfig& cfg, int vocab_size, const PrototypeMatrix* pm);

  /// Parameters restored from a checkpoint.
  XproModel(const RunConfig& cfg, int vocab_size, ParamStore store);

  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const RunConfig& config() const { return cfg_; }
  bool uses_prototypes() const { return !cfg_.disable_prototype_network; }
  int vocab_size() const { return vocab_size_; }

  struct SampleLoss {
    Tensor ce;
    Tensor visual_responses;   // [N^s x d] when prototypes are enabled
    Tensor textual_responses;  // [T x d]
    bool has_responses = false;
  };
  /// Teacher-forced forward pass for one sample.
  SampleLoss forward_sample(const Sample& s, std::mt19937_64* drop_rng, bool train);

  struct BatchLoss {
    Tensor total, ce, visual_icn, textual_icn;
  };
  /// Mean cross-entropy plus both contrastive terms over a batch.
  BatchLoss forward_batch(std::span<const Sample> batch, std::mt19937_64* drop_rng, bool train);

  GenOutput generate(const Sample& s, const GenOptions& opt) const;

  /// Runs generation, then reports the selected prototype indices of every
  /// patch and generated token plus the cross-attention-aligned patch.
  InspectResult inspect(const Sample& s, const GenOptions& opt) const;

 private:
  Tensor patch_features(const Sample& s) const;
  std::vector<int> inference_mask(const Sample& s, const GenOptions& opt) const;
  Tensor candidate_rows(const std::vector<int>& mask, SelectedCandidates* out) const;
  ProtoNetParams proto_params() const;

  RunConfig cfg_;
  int vocab_size_ = 0;
  ParamStore store_;
  std::unique_ptr<Transformer> transformer_;
};

/// Prototype-side parameters (the memory, projections, fusion) train in the
/// Prototype group; everything else in EncoderDecoder.
ParamGroup param_group_for(const std::string& name);

}  // namespace xpro
