#pragma once

#include <vector>

#include <json.hpp>

#include "xpro/tensor.hpp"

namespace xpro {

/// One candidate against its reference(s); PAD/BOS/EOS must be stripped
/// before scoring (see strip_special).
struct EvalPair {
  std::vector<int> candidate;
  std::vector<std::vector<int>> references;
};

/// Removes PAD/BOS/EOS ids.
std::vector<int> strip_special(const std::vector<int>& tokens);

/// Corpus-level BLEU-n: clipped modified n-gram precision, geometric mean
/// over orders 1..n, brevity penalty, and add-eps smoothing of zero
/// precisions.
double bleu(const std::vector<EvalPair>& pairs, int n);

/// Mean LCS F-measure with beta = 1.2; pairs with an empty reference are
/// skipped.
double rouge_l(const std::vector<EvalPair>& pairs);

/// {bleu_1..bleu_4, rouge_l, n_samples}
nlohmann::json metrics_report(const std::vector<EvalPair>& pairs);

}  // namespace xpro
