#include "xpro/config.hpp"

#include <fstream>
#include <set>

namespace xpro {

namespace {

using nlohmann::json;

struct FieldReader {
  const json& j;
  std::set<std::string> known;

  template <class T>
  void read(const char* key, T& field) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }

  void finish() const {
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (known.count(it.key())) continue;
      if (!bad.empty()) bad += ", ";
      bad += it.key();
    }
    if (!bad.empty()) throw ConfigError("config: unknown keys: " + bad);
  }
};

}  // namespace

void RunConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string("config: ") + name + " must be >= 1");
  };
  positive(num_categories, "num_categories");
  positive(prototypes_per_category, "prototypes_per_category");
  positive(top_gamma, "top_gamma");
  positive(query_heads, "query_heads");
  positive(channels, "channels");
  positive(proto_proj_dim, "proto_proj_dim");
  positive(query_dim, "query_dim");
  positive(visual_feature_dim, "visual_feature_dim");
  positive(textual_feature_dim, "textual_feature_dim");
  positive(model_layers, "model_layers");
  positive(attention_heads, "attention_heads");
  positive(feed_forward_dim, "feed_forward_dim");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  positive(beam_size, "beam_size");
  positive(val_beam_size, "val_beam_size");
  positive(validate_every, "validate_every");
  positive(jobs, "jobs");
  if (max_len < 4) throw ConfigError("config: max_len must be >= 4");
  if (query_dim % query_heads != 0)
    throw ConfigError("config: query_dim must be divisible by query_heads");
  if (channels % attention_heads != 0)
    throw ConfigError("config: channels must be divisible by attention_heads");
  if (tolerance_base <= 0.0) throw ConfigError("config: tolerance_base must be > 0");
  if (negative_margin < 0.0 || negative_margin >= 1.0)
    throw ConfigError("config: negative_margin must lie in [0,1)");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must lie in [0,1)");
  if (learning_rate_decay <= 0.0 || learning_rate_decay > 1.0)
    throw ConfigError("config: learning_rate_decay must lie in (0,1]");
  if (proto_learning_rate <= 0.0 || encdec_learning_rate <= 0.0)
    throw ConfigError("config: learning rates must be > 0");
  if (inference_label_mode != "all" && inference_label_mode != "oracle")
    throw ConfigError("config: inference_label_mode must be 'all' or 'oracle'");
  if (weight_normalizer != "softmax" && weight_normalizer != "literal-linear")
    throw ConfigError("config: weight_normalizer must be 'softmax' or 'literal-linear'");
}

json RunConfig::to_json() const {
  return json{{"num_categories", num_categories},
              {"prototypes_per_category", prototypes_per_category},
              {"top_gamma", top_gamma},
              {"query_heads", query_heads},
              {"channels", channels},
              {"proto_proj_dim", proto_proj_dim},
              {"query_dim", query_dim},
              {"visual_feature_dim", visual_feature_dim},
              {"textual_feature_dim", textual_feature_dim},
              {"tolerance_base", tolerance_base},
              {"negative_margin", negative_margin},
              {"visual_loss_weight", visual_loss_weight},
              {"textual_loss_weight", textual_loss_weight},
              {"clamp_positive", clamp_positive},
              {"model_layers", model_layers},
              {"attention_heads", attention_heads},
              {"feed_forward_dim", feed_forward_dim},
              {"dropout", dropout},
              {"max_len", max_len},
              {"encoder_positions", encoder_positions},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"proto_learning_rate", proto_learning_rate},
              {"encdec_learning_rate", encdec_learning_rate},
              {"learning_rate_decay", learning_rate_decay},
              {"seed", seed},
              {"validate_every", validate_every},
              {"beam_size", beam_size},
              {"val_beam_size", val_beam_size},
              {"length_normalize", length_normalize},
              {"inference_label_mode", inference_label_mode},
              {"weight_normalizer", weight_normalizer},
              {"disable_prototype_init", disable_prototype_init},
              {"disable_improved_loss", disable_improved_loss},
              {"disable_prototype_network", disable_prototype_network},
              {"dataset_dir", dataset_dir},
              {"pm_path", pm_path},
              {"run_dir", run_dir},
              {"jobs", jobs}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  RunConfig c;
  FieldReader r{j, {}};
  r.read("num_categories", c.num_categories);
  r.read("prototypes_per_category", c.prototypes_per_category);
  r.read("top_gamma", c.top_gamma);
  r.read("query_heads", c.query_heads);
  r.read("channels", c.channels);
  r.read("proto_proj_dim", c.proto_proj_dim);
  r.read("query_dim", c.query_dim);
  r.read("visual_feature_dim", c.visual_feature_dim);
  r.read("textual_feature_dim", c.textual_feature_dim);
  r.read("tolerance_base", c.tolerance_base);
  r.read("negative_margin", c.negative_margin);
  r.read("visual_loss_weight", c.visual_loss_weight);
  r.read("textual_loss_weight", c.textual_loss_weight);
  r.read("clamp_positive", c.clamp_positive);
  r.read("model_layers", c.model_layers);
  r.read("attention_heads", c.attention_heads);
  r.read("feed_forward_dim", c.feed_forward_dim);
  r.read("dropout", c.dropout);
  r.read("max_len", c.max_len);
  r.read("encoder_positions", c.encoder_positions);
  r.read("batch_size", c.batch_size);
  r.read("epochs", c.epochs);
  r.read("proto_learning_rate", c.proto_learning_rate);
  r.read("encdec_learning_rate", c.encdec_learning_rate);
  r.read("learning_rate_decay", c.learning_rate_decay);
  r.read("seed", c.seed);
  r.read("validate_every", c.validate_every);
  r.read("beam_size", c.beam_size);
  r.read("val_beam_size", c.val_beam_size);
  r.read("length_normalize", c.length_normalize);
  r.read("inference_label_mode", c.inference_label_mode);
  r.read("weight_normalizer", c.weight_normalizer);
  r.read("disable_prototype_init", c.disable_prototype_init);
  r.read("disable_improved_loss", c.disable_improved_loss);
  r.read("disable_prototype_network", c.disable_prototype_network);
  r.read("dataset_dir", c.dataset_dir);
  r.read("pm_path", c.pm_path);
  r.read("run_dir", c.run_dir);
  r.read("jobs", c.jobs);
  r.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig m;
  m.layers = model_layers;
  m.heads = attention_heads;
  m.d_model = channels;
  m.ffn_dim = feed_forward_dim;
  m.max_len = max_len;
  m.vocab_size = vocab_size;
  m.dropout = dropout;
  m.encoder_positions = encoder_positions;
  return m;
}

LossConfig RunConfig::loss_config() const {
  LossConfig l;
  l.theta = tolerance_base;
  l.alpha = negative_margin;
  l.lambda = visual_loss_weight;
  l.delta = textual_loss_weight;
  l.clamp_positive = clamp_positive;
  l.improved = !disable_improved_loss;
  return l;
}

ProtoNetConfig RunConfig::proto_config() const {
  ProtoNetConfig p;
  p.gamma = top_gamma;
  p.heads = query_heads;
  p.normalizer = weight_normalizer == "softmax" ? ProtoNetConfig::Normalizer::Softmax
                                                : ProtoNetConfig::Normalizer::LiteralLinear;
  return p;
}

}  // namespace xpro
