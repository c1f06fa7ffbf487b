#include "xpro/seq_model.hpp"

#include <cmath>

namespace xpro {

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model config: layers must be >= 1");
  if (heads < 1) throw ConfigError("model config: heads must be >= 1");
  if (d_model % heads != 0)
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  if (ffn_dim < 1) throw ConfigError("model config: ffn_dim must be >= 1");
  if (max_len < 2) throw ConfigError("model config: max_len must be >= 2");
  if (vocab_size < 5) throw ConfigError("model config: vocabulary too small");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout must lie in [0,1)");
}

Tensor sinusoidal_positions(int len, int dim) {
  Tensor pos({len, dim});
  for (int t = 0; t < len; ++t)
    for (int i = 0; i < dim; ++i) {
      const double angle = t / std::pow(10000.0, (2.0 * (i / 2)) / dim);
      pos.at(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pos;
}

Tensor causal_mask(int len) {
  Tensor mask({len, len});
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) mask.at(i, j) = -1e9;
  return mask;
}

namespace {

Tensor xavier(Shape shape, std::mt19937_64& rng) {
  const double fan_in = shape[0], fan_out = shape[1];
  return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / (fan_in + fan_out)));
}

void add_norm(ParamStore& s, const std::string& prefix, int dim) {
  s.add(prefix + ".gain", Tensor::full({dim}, 1.0), ParamGroup::EncoderDecoder);
  s.add(prefix + ".bias", Tensor::zeros({dim}), ParamGroup::EncoderDecoder);
}

void add_attn(ParamStore& s, const std::string& prefix, int dim, std::mt19937_64& rng) {
  for (const char* name : {"wq", "wk", "wv", "wo"})
    s.add(prefix + "." + name, xavier({dim, dim}, rng), ParamGroup::EncoderDecoder);
  for (const char* name : {"bq", "bk", "bv", "bo"})
    s.add(prefix + "." + name, Tensor::zeros({dim}), ParamGroup::EncoderDecoder);
}

void add_ffn(ParamStore& s, const std::string& prefix, int dim, int hidden,
             std::mt19937_64& rng) {
  s.add(prefix + ".w1", xavier({dim, hidden}, rng), ParamGroup::EncoderDecoder);
  s.add(prefix + ".b1", Tensor::zeros({hidden}), ParamGroup::EncoderDecoder);
  s.add(prefix + ".w2", xavier({hidden, dim}, rng), ParamGroup::EncoderDecoder);
  s.add(prefix + ".b2", Tensor::zeros({dim}), ParamGroup::EncoderDecoder);
}

}  // namespace

void init_seq_params(ParamStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  store.add("embed.table",
            Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, 1.0 / std::sqrt(cfg.d_model)),
            ParamGroup::EncoderDecoder);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string enc = "enc." + std::to_string(l);
    add_norm(store, enc + ".ln1", cfg.d_model);
    add_attn(store, enc + ".attn", cfg.d_model, rng);
    add_norm(store, enc + ".ln2", cfg.d_model);
    add_ffn(store, enc + ".ffn", cfg.d_model, cfg.ffn_dim, rng);

    const std::string dec = "dec." + std::to_string(l);
    add_norm(store, dec + ".ln1", cfg.d_model);
    add_attn(store, dec + ".self", cfg.d_model, rng);
    add_norm(store, dec + ".ln2", cfg.d_model);
    add_attn(store, dec + ".cross", cfg.d_model, rng);
    add_norm(store, dec + ".ln3", cfg.d_model);
    add_ffn(store, dec + ".ffn", cfg.d_model, cfg.ffn_dim, rng);
  }
  add_norm(store, "enc.norm", cfg.d_model);
  add_norm(store, "dec.norm", cfg.d_model);
  // near-zero output projection keeps the initial distribution near uniform
  store.add("out.w", Tensor::randn({cfg.d_model, cfg.vocab_size}, rng, 0.02),
            ParamGroup::EncoderDecoder);
  store.add("out.b", Tensor::zeros({cfg.vocab_size}), ParamGroup::EncoderDecoder);
}

Transformer::Transformer(const ModelConfig& cfg, ParamStore& store) : cfg_(cfg) {
  cfg_.validate();
  embed_table_ = store.get("embed.table");
  auto norm = [&](const std::string& prefix) {
    return NormParams{store.get(prefix + ".gain"), store.get(prefix + ".bias")};
  };
  auto attn = [&](const std::string& prefix) {
    return AttnParams{store.get(prefix + ".wq"), store.get(prefix + ".bq"),
                      store.get(prefix + ".wk"), store.get(prefix + ".bk"),
                      store.get(prefix + ".wv"), store.get(prefix + ".bv"),
                      store.get(prefix + ".wo"), store.get(prefix + ".bo")};
  };
  auto ffnp = [&](const std::string& prefix) {
    return FfnParams{store.get(prefix + ".w1"), store.get(prefix + ".b1"),
                     store.get(prefix + ".w2"), store.get(prefix + ".b2")};
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string enc = "enc." + std::to_string(l);
    enc_.push_back(EncoderLayer{norm(enc + ".ln1"), norm(enc + ".ln2"), attn(enc + ".attn"),
                                ffnp(enc + ".ffn")});
    const std::string dec = "dec." + std::to_string(l);
    dec_.push_back(DecoderLayer{norm(dec + ".ln1"), norm(dec + ".ln2"), norm(dec + ".ln3"),
                                attn(dec + ".self"), attn(dec + ".cross"), ffnp(dec + ".ffn")});
  }
  enc_norm_ = norm("enc.norm");
  dec_norm_ = norm("dec.norm");
  out_w_ = store.get("out.w");
  out_b_ = store.get("out.b");
}

Tensor Transformer::embed_report(const std::vector<int>& tokens) const {
  if (tokens.empty()) return Tensor();  // empty sequence, no storage
  if (static_cast<int>(tokens.size()) > cfg_.max_len)
    throw ContractError("embed_report: prefix length " + std::to_string(tokens.size()) +
                        " exceeds max_len " + std::to_string(cfg_.max_len));
  for (int id : tokens)
    if (id < 0 || id >= cfg_.vocab_size)
      throw ContractError("embed_report: token id " + std::to_string(id) +
                          " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
  Tensor emb = gather_rows(embed_table_, tokens);
  emb = scale(emb, std::sqrt(static_cast<double>(cfg_.d_model)));
  return add(emb, sinusoidal_positions(static_cast<int>(tokens.size()), cfg_.d_model));
}

Tensor Transformer::maybe_dropout(const Tensor& x, std::mt19937_64* rng, bool train) const {
  if (!train || !rng) return x;
  return dropout(x, cfg_.dropout, *rng, true);
}

Tensor Transformer::mha(const Tensor& q_in, const Tensor& kv_in, const AttnParams& p,
                        const Tensor* mask, Tensor* trace) const {
  Tensor q = linear(q_in, p.wq, p.bq);
  Tensor k = linear(kv_in, p.wk, p.bk);
  Tensor v = linear(kv_in, p.wv, p.bv);
  const int head_dim = cfg_.d_model / cfg_.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
    Tensor scores = scale(matmul(slice_cols(q, c0, c1), transpose(slice_cols(k, c0, c1))), scl);
    if (mask) scores = add(scores, *mask);
    Tensor weights = softmax_rows(scores);
    if (trace) {
      if (trace->numel() == 0) *trace = Tensor(weights.shape());
      for (int i = 0; i < weights.numel(); ++i)
        trace->data()[i] += weights.data()[i] / cfg_.heads;
    }
    heads.push_back(matmul(weights, slice_cols(v, c0, c1)));
  }
  Tensor merged = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
  return linear(merged, p.wo, p.bo);
}

Tensor Transformer::ffn(const Tensor& x, const FfnParams& p) const {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor Transformer::encode(const Tensor& source, std::mt19937_64* drop_rng, bool train) const {
  Tensor x = source;
  if (cfg_.encoder_positions)
    x = add(x, sinusoidal_positions(source.rows(), cfg_.d_model));
  for (const EncoderLayer& layer : enc_) {
    Tensor h = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    x = add(x, maybe_dropout(mha(h, h, layer.attn, nullptr, nullptr), drop_rng, train));
    Tensor h2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, maybe_dropout(ffn(h2, layer.ffn), drop_rng, train));
  }
  return layer_norm(x, enc_norm_.gain, enc_norm_.bias);
}

Tensor Transformer::decode(const Tensor& memory, const Tensor& target,
                           std::mt19937_64* drop_rng, bool train, Tensor* cross_trace) const {
  if (target.rows() < 1) throw ContractError("decode: empty target prefix");
  if (target.rows() > cfg_.max_len)
    throw ContractError("decode: prefix length " + std::to_string(target.rows()) +
                        " exceeds max_len " + std::to_string(cfg_.max_len));
  Tensor mask = causal_mask(target.rows());
  Tensor x = target;
  for (size_t l = 0; l < dec_.size(); ++l) {
    const DecoderLayer& layer = dec_[l];
    Tensor h = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    x = add(x, maybe_dropout(mha(h, h, layer.self_attn, &mask, nullptr), drop_rng, train));
    Tensor h2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    Tensor* trace = (cross_trace && l + 1 == dec_.size()) ? cross_trace : nullptr;
    x = add(x, maybe_dropout(mha(h2, memory, layer.cross_attn, nullptr, trace), drop_rng, train));
    Tensor h3 = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, maybe_dropout(ffn(h3, layer.ffn), drop_rng, train));
  }
  Tensor final_h = layer_norm(x, dec_norm_.gain, dec_norm_.bias);
  return softmax_rows(linear(final_h, out_w_, out_b_));
}

}  // namespace xpro
