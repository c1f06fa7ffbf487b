#pragma once

#include <map>
#include <string>

#include "xpro/tensor.hpp"

namespace xpro {

/// Optimizer grouping: prototype-side parameters train at a different
/// learning rate than the encoder-decoder stack.
enum class ParamGroup { Prototype, EncoderDecoder };

/// Named learnable tensors with deterministic (name-sorted) iteration order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t, ParamGroup group);
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  ParamGroup group(const std::string& name) const;

  const std::map<std::string, Tensor>& items() const { return params_; }
  size_t size() const { return params_.size(); }

  void watch_all(Tape& tape);
  void unbind_all();

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, ParamGroup> groups_;
};

inline constexpr const char* kCheckpointMagic = "XPRO-CKPT-1";

/// Binary checkpoint: magic line, then name -> shape + flat f64 data
/// (little-endian), entries in name order.
void save_checkpoint(const ParamStore& store, const std::string& path);

/// Loads parameter values; groups are reassigned by the caller via
/// `group_hint` (name -> group), defaulting to EncoderDecoder.
ParamStore load_checkpoint(const std::string& path,
                           const std::map<std::string, ParamGroup>* group_hint = nullptr);

}  // namespace xpro
