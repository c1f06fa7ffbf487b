#include "xpro/vocab.hpp"

#include <sstream>

namespace xpro {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_[token] = id;
  return id;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range [0," +
                        std::to_string(size()) + ")");
  return tokens_[static_cast<size_t>(id)];
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out += ' ';
    out += token_of(id);
  }
  return out;
}

std::vector<int> Vocabulary::tokenize(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const std::string& t : tokens) out.push_back(id_of(t));
  return out;
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json{{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw DataError("vocabulary: missing 'tokens' array");
  const auto& toks = j["tokens"];
  Vocabulary v;
  for (size_t i = 0; i < toks.size(); ++i) {
    const std::string t = toks[i].get<std::string>();
    if (static_cast<int>(i) < v.size()) {
      if (v.token_of(static_cast<int>(i)) != t)
        throw DataError("vocabulary: reserved token mismatch at id " + std::to_string(i));
      continue;
    }
    if (v.contains(t)) throw DataError("vocabulary: duplicate token '" + t + "'");
    v.add(t);
  }
  return v;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace xpro
