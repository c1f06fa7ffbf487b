#include "xpro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <thread>

namespace xpro {

std::vector<GenOutput> generate_all(const XproModel& model, const std::vector<Sample>& samples,
                                    const GenOptions& opt, int jobs) {
  std::vector<GenOutput> out(samples.size());
  auto worker = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) out[i] = model.generate(samples[i], opt);
  };
  if (jobs <= 1 || samples.size() < 2) {
    worker(0, samples.size());
    return out;
  }
  const size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), samples.size());
  std::vector<std::thread> pool;
  const size_t chunk = (samples.size() + n_threads - 1) / n_threads;
  for (size_t t = 0; t < n_threads; ++t) {
    const size_t begin = t * chunk;
    const size_t end = std::min(samples.size(), begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(worker, begin, end);
  }
  for (auto& th : pool) th.join();
  return out;
}

std::vector<EvalPair> evaluation_pairs(const XproModel& model,
                                       const std::vector<Sample>& samples, const GenOptions& opt,
                                       int jobs) {
  const auto generated = generate_all(model, samples, opt, jobs);
  std::vector<EvalPair> pairs;
  pairs.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i)
    pairs.push_back(EvalPair{generated[i].tokens, {samples[i].report}});
  return pairs;
}

TrainResult train_model(XproModel& model, const std::vector<Sample>& train_set,
                        const std::vector<Sample>& val_set, const std::string& checkpoint_path,
                        std::ostream* loss_csv) {
  const RunConfig& cfg = model.config();
  if (train_set.empty()) throw DataError("train: empty training set");

  std::map<std::string, AdamState> opt_states;
  for (const auto& [name, t] : model.params().items()) {
    const double lr = model.params().group(name) == ParamGroup::Prototype
                          ? cfg.proto_learning_rate
                          : cfg.encdec_learning_rate;
    opt_states.emplace(name, AdamState(t.numel(), lr));
  }

  std::mt19937_64 drop_rng(mix_seed(cfg.seed, 0xd201));
  GenOptions val_opt;
  val_opt.beam_size = cfg.val_beam_size;
  val_opt.length_normalize = cfg.length_normalize;

  if (loss_csv)
    *loss_csv << "epoch,cross_entropy,visual_contrastive,textual_contrastive,total\n";

  TrainResult result;
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0xe70c + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochStats stats;
    stats.epoch = epoch;
    size_t seen = 0;
    std::vector<Sample> batch;
    for (size_t at = 0; at < order.size();) {
      batch.clear();
      for (int b = 0; b < cfg.batch_size && at < order.size(); ++b, ++at)
        batch.push_back(train_set[order[at]]);

      Tape tape;
      model.params().watch_all(tape);
      XproModel::BatchLoss loss = model.forward_batch(batch, &drop_rng, true);
      if (!std::isfinite(loss.total.value()))
        throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch));
      tape.backward(loss.total);
      for (auto& [name, state] : opt_states)
        adam_step(state, model.params().get(name), tape.grad(model.params().get(name)));
      model.params().unbind_all();

      const double w = static_cast<double>(batch.size());
      stats.cross_entropy += loss.ce.value() * w;
      stats.visual_icn += loss.visual_icn.value() * w;
      stats.textual_icn += loss.textual_icn.value() * w;
      stats.total += loss.total.value() * w;
      seen += batch.size();
    }
    stats.cross_entropy /= static_cast<double>(seen);
    stats.visual_icn /= static_cast<double>(seen);
    stats.textual_icn /= static_cast<double>(seen);
    stats.total /= static_cast<double>(seen);

    const bool last_epoch = epoch + 1 == cfg.epochs;
    if (!val_set.empty() && (epoch % cfg.validate_every == 0 || last_epoch)) {
      stats.val_bleu4 = bleu(evaluation_pairs(model, val_set, val_opt, cfg.jobs), 4);
      if (stats.val_bleu4 > result.best_val_bleu4) {
        result.best_val_bleu4 = stats.val_bleu4;
        result.best_epoch = epoch;
        if (!checkpoint_path.empty()) save_checkpoint(model.params(), checkpoint_path);
      }
    }

    for (auto& [name, state] : opt_states) state.decay_lr(cfg.learning_rate_decay);

    if (loss_csv) {
      char line[256];
      std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g\n", epoch, stats.cross_entropy,
                    stats.visual_icn, stats.textual_icn, stats.total);
      *loss_csv << line;
    }
    result.history.push_back(stats);
  }

  // no validation ever ran: persist the final weights instead
  if (result.best_epoch < 0 && !checkpoint_path.empty())
    save_checkpoint(model.params(), checkpoint_path);
  return result;
}

}  // namespace xpro
