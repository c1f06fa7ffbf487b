#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "xpro/objectives.hpp"
#include "xpro/proto_net.hpp"
#include "xpro/seq_model.hpp"

namespace xpro {

/// Every hyperparameter of a run. JSON keys are the field names; unknown
/// keys are rejected so silent typos cannot change a run.
struct RunConfig {
  // label space and prototype memory
  int num_categories = 14;
  int prototypes_per_category = 20;
  int top_gamma = 15;
  int query_heads = 2;

  // widths
  int channels = 32;           // patch feature width, also d_model
  int proto_proj_dim = 32;     // candidate projection width
  int query_dim = 32;          // similarity space width
  int visual_feature_dim = 16;   // initialization extractor, visual half
  int textual_feature_dim = 16;  // initialization extractor, textual half

  // objective
  double tolerance_base = 1.5;
  double negative_margin = 0.4;
  double visual_loss_weight = 1.0;
  double textual_loss_weight = 0.1;
  bool clamp_positive = false;

  // transformer
  int model_layers = 2;
  int attention_heads = 2;
  int feed_forward_dim = 64;
  double dropout = 0.1;
  int max_len = 48;
  bool encoder_positions = true;

  // optimization
  int batch_size = 16;
  int epochs = 15;
  double proto_learning_rate = 2e-3;
  double encdec_learning_rate = 1e-3;
  double learning_rate_decay = 0.8;
  std::uint64_t seed = 1;
  int validate_every = 1;

  // decoding
  int beam_size = 3;
  int val_beam_size = 1;
  bool length_normalize = true;

  // modes
  std::string inference_label_mode = "all";   // all | oracle
  std::string weight_normalizer = "softmax";  // softmax | literal-linear

  // ablations
  bool disable_prototype_init = false;    // random memory instead of clustering
  bool disable_improved_loss = false;     // tolerance term replaced by 1
  bool disable_prototype_network = false; // bypass the prototype pipeline entirely

  // paths and execution
  std::string dataset_dir;
  std::string pm_path;
  std::string run_dir;
  int jobs = 1;

  int feature_dim() const { return visual_feature_dim + textual_feature_dim; }

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  std::uint64_t hash() const;

  ModelConfig model_config(int vocab_size) const;
  LossConfig loss_config() const;
  ProtoNetConfig proto_config() const;
};

}  // namespace xpro
