#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xpro/checkpoint.hpp"
#include "xpro/tensor.hpp"

namespace xpro {

struct ModelConfig {
  int layers = 2;
  int heads = 2;
  int d_model = 32;
  int ffn_dim = 64;
  int max_len = 48;
  int vocab_size = 0;
  double dropout = 0.1;
  bool encoder_positions = true;

  void validate() const;
};

/// Sinusoidal position encodings, [len x dim].
Tensor sinusoidal_positions(int len, int dim);

/// Additive causal mask, 0 on/below the diagonal and -1e9 above.
Tensor causal_mask(int len);

/// Creates the embedding / encoder / decoder / output parameters in `store`.
void init_seq_params(ParamStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

/// Pre-norm transformer encoder-decoder over parameters held in a ParamStore.
/// The object only borrows tensor handles; watching the store makes every
/// forward pass differentiable.
class Transformer {
 public:
  Transformer(const ModelConfig& cfg, ParamStore& store);

  /// Token embeddings (scaled) plus position encodings; [T x d_model].
  Tensor embed_report(const std::vector<int>& tokens) const;

  /// Encoder stack over a source sequence; [S x d_model].
  Tensor encode(const Tensor& source, std::mt19937_64* drop_rng, bool train) const;

  /// Causally masked decoder over the embedded target prefix with
  /// cross-attention into `memory`; returns next-token distributions for
  /// every position, [T x vocab]. `cross_trace` (optional) receives the
  /// last layer's head-averaged cross-attention weights as plain values.
  Tensor decode(const Tensor& memory, const Tensor& target, std::mt19937_64* drop_rng,
                bool train, Tensor* cross_trace = nullptr) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  struct AttnParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct NormParams {
    Tensor gain, bias;
  };
  struct FfnParams {
    Tensor w1, b1, w2, b2;
  };
  struct EncoderLayer {
    NormParams ln1, ln2;
    AttnParams attn;
    FfnParams ffn;
  };
  struct DecoderLayer {
    NormParams ln1, ln2, ln3;
    AttnParams self_attn, cross_attn;
    FfnParams ffn;
  };

  Tensor mha(const Tensor& q_in, const Tensor& kv_in, const AttnParams& p, const Tensor* mask,
             Tensor* trace) const;
  Tensor ffn(const Tensor& x, const FfnParams& p) const;
  Tensor maybe_dropout(const Tensor& x, std::mt19937_64* rng, bool train) const;

  ModelConfig cfg_;
  Tensor embed_table_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  NormParams enc_norm_, dec_norm_;
  Tensor out_w_, out_b_;
};

}  // namespace xpro
