#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "xpro/util.hpp"

namespace xpro {

/// Token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();

  /// Adds a token if absent; returns its id either way.
  int add(const std::string& token);
  /// Id of a token, kUnk when missing.
  int id_of(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  /// Joins content tokens with spaces, skipping PAD/BOS/EOS.
  std::string detokenize(const std::vector<int>& ids) const;
  std::vector<int> tokenize(const std::vector<std::string>& tokens) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Whitespace tokenizer for sentence templates.
std::vector<std::string> split_tokens(const std::string& text);

}  // namespace xpro
