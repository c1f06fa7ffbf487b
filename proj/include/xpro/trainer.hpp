#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "xpro/metrics.hpp"
#include "xpro/model.hpp"
#include "xpro/optim.hpp"

namespace xpro {

struct EpochStats {
  int epoch = 0;
  double cross_entropy = 0.0;
  double visual_icn = 0.0;
  double textual_icn = 0.0;
  double total = 0.0;
  double val_bleu4 = -1.0;  // -1 when validation did not run this epoch
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_bleu4 = -1.0;
};

/// Generates every sample (greedy or beam); `jobs` > 1 fans samples across
/// threads with results merged in input order.
std::vector<GenOutput> generate_all(const XproModel& model, const std::vector<Sample>& samples,
                                    const GenOptions& opt, int jobs = 1);

/// Candidate/reference pairs from generation against the stored reports.
std::vector<EvalPair> evaluation_pairs(const XproModel& model,
                                       const std::vector<Sample>& samples, const GenOptions& opt,
                                       int jobs = 1);

/// Seeded shuffled mini-batches, Adam with separate prototype / encoder-
/// decoder learning rates, per-epoch multiplicative decay, validation
/// BLEU-4 checkpointing. Writes one CSV row per epoch when `loss_csv` is
/// non-null. Non-finite losses raise NumericError.
TrainResult train_model(XproModel& model, const std::vector<Sample>& train_set,
                        const std::vector<Sample>& val_set, const std::string& checkpoint_path,
                        std::ostream* loss_csv);

}  // namespace xpro
