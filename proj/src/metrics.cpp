#include "xpro/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "xpro/vocab.hpp"

namespace xpro {

std::vector<int> strip_special(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != Vocabulary::kPad && t != Vocabulary::kBos && t != Vocabulary::kEos)
      out.push_back(t);
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<int>, int>;

NgramCounts count_ngrams(const std::vector<int>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i)
    counts[std::vector<int>(tokens.begin() + static_cast<long>(i),
                            tokens.begin() + static_cast<long>(i + n))]++;
  return counts;
}

int lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t m = a.size(), n = b.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace

double bleu(const std::vector<EvalPair>& pairs, int n) {
  if (n < 1 || n > 4) throw ContractError("bleu: order must lie in 1..4");
  long candidate_len = 0, reference_len = 0;
  std::vector<long> matched(static_cast<size_t>(n), 0), total(static_cast<size_t>(n), 0);
  for (const EvalPair& pair : pairs) {
    const std::vector<int> cand = strip_special(pair.candidate);
    candidate_len += static_cast<long>(cand.size());
    // closest reference length, ties toward the shorter
    long best_ref = 0;
    long best_gap = -1;
    for (const auto& ref_raw : pair.references) {
      const long len = static_cast<long>(strip_special(ref_raw).size());
      const long gap = std::labs(len - static_cast<long>(cand.size()));
      if (best_gap < 0 || gap < best_gap || (gap == best_gap && len < best_ref)) {
        best_gap = gap;
        best_ref = len;
      }
    }
    reference_len += best_ref;
    for (int order = 1; order <= n; ++order) {
      NgramCounts cand_counts = count_ngrams(cand, order);
      NgramCounts clip;
      for (const auto& ref_raw : pair.references) {
        NgramCounts ref_counts = count_ngrams(strip_special(ref_raw), order);
        for (const auto& [gram, count] : ref_counts) {
          auto it = clip.find(gram);
          if (it == clip.end())
            clip[gram] = count;
          else
            it->second = std::max(it->second, count);
        }
      }
      for (const auto& [gram, count] : cand_counts) {
        total[static_cast<size_t>(order - 1)] += count;
        auto it = clip.find(gram);
        if (it != clip.end())
          matched[static_cast<size_t>(order - 1)] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  for (int order = 0; order < n; ++order) {
    double precision =
        total[static_cast<size_t>(order)] == 0
            ? 0.0
            : static_cast<double>(matched[static_cast<size_t>(order)]) / total[static_cast<size_t>(order)];
    if (precision == 0.0) precision = 1e-9;  // add-eps smoothing
    log_sum += std::log(precision) / n;
  }
  const double brevity =
      candidate_len >= reference_len || candidate_len == 0
          ? 1.0
          : std::exp(1.0 - static_cast<double>(reference_len) / candidate_len);
  return brevity * std::exp(log_sum);
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  constexpr double kBeta = 1.2;
  double sum = 0.0;
  int scored = 0;
  for (const EvalPair& pair : pairs) {
    const std::vector<int> cand = strip_special(pair.candidate);
    double best = 0.0;
    bool any_ref = false;
    for (const auto& ref_raw : pair.references) {
      const std::vector<int> ref = strip_special(ref_raw);
      if (ref.empty()) continue;
      any_ref = true;
      if (cand.empty()) continue;
      const int lcs = lcs_length(cand, ref);
      const double precision = static_cast<double>(lcs) / static_cast<double>(cand.size());
      const double recall = static_cast<double>(lcs) / static_cast<double>(ref.size());
      const double denom = recall + kBeta * kBeta * precision;
      if (denom > 0.0)
        best = std::max(best, (1.0 + kBeta * kBeta) * precision * recall / denom);
    }
    if (!any_ref) {
      std::cerr << "rouge_l: skipping a pair with an empty reference\n";
      continue;
    }
    sum += best;
    ++scored;
  }
  return scored == 0 ? 0.0 : sum / scored;
}

nlohmann::json metrics_report(const std::vector<EvalPair>& pairs) {
  return nlohmann::json{{"bleu_1", bleu(pairs, 1)}, {"bleu_2", bleu(pairs, 2)},
                        {"bleu_3", bleu(pairs, 3)}, {"bleu_4", bleu(pairs, 4)},
                        {"rouge_l", rouge_l(pairs)}, {"n_samples", pairs.size()}};
}

}  // namespace xpro
