#include "xpro/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "xpro/config.hpp"
#include "xpro/corpus.hpp"
#include "xpro/metrics.hpp"
#include "xpro/model.hpp"
#include "xpro/proto_init.hpp"
#include "xpro/trainer.hpp"

namespace xpro {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    json extra) {
  json manifest{{"command", command},
                {"config_hash", hash_hex(cfg.hash())},
                {"seed", cfg.seed}};
  manifest.update(extra);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Vocabulary load_vocab(const std::string& dataset_dir) {
  const fs::path path = fs::path(dataset_dir) / "vocab.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("vocabulary " + path.string() + ": " + e.what());
  }
  return Vocabulary::from_json(j);
}

std::vector<Sample> load_split(const std::string& dataset_dir, const std::string& split,
                               const Vocabulary& vocab) {
  return load_dataset((fs::path(dataset_dir) / (split + ".jsonl")).string(), vocab);
}

/// Config resolution: file (when given) -> CLI overrides -> validation.
struct ConfigCli {
  std::string config_path;
  bool print_config = false;
  json overrides = json::object();

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_flag("--print-config", print_config, "echo the resolved configuration and exit");
    add_override<std::string>(cmd, "--dataset-dir", "dataset_dir");
    add_override<std::string>(cmd, "--pm", "pm_path");
    add_override<std::string>(cmd, "--run-dir", "run_dir");
    add_override<std::uint64_t>(cmd, "--seed", "seed");
    add_override<int>(cmd, "--epochs", "epochs");
    add_override<int>(cmd, "--batch-size", "batch_size");
    add_override<int>(cmd, "--beam-size", "beam_size");
    add_override<int>(cmd, "--val-beam-size", "val_beam_size");
    add_override<int>(cmd, "--gamma", "top_gamma");
    add_override<int>(cmd, "--query-heads", "query_heads");
    add_override<int>(cmd, "--prototypes-per-category", "prototypes_per_category");
    add_override<int>(cmd, "--jobs", "jobs");
    add_override<double>(cmd, "--theta", "tolerance_base");
    add_override<double>(cmd, "--alpha", "negative_margin");
    add_override<double>(cmd, "--lambda", "visual_loss_weight");
    add_override<double>(cmd, "--delta", "textual_loss_weight");
    add_override<double>(cmd, "--dropout", "dropout");
    add_override<std::string>(cmd, "--inference-label-mode", "inference_label_mode");
    add_override<std::string>(cmd, "--weight-normalizer", "weight_normalizer");
    add_flag_override(cmd, "--disable-prototype-init", "disable_prototype_init");
    add_flag_override(cmd, "--disable-improved-loss", "disable_improved_loss");
    add_flag_override(cmd, "--disable-prototype-network", "disable_prototype_network");
  }

  RunConfig resolve() const {
    json merged = config_path.empty() ? RunConfig().to_json() : json::object();
    if (!config_path.empty()) merged = RunConfig::from_file(config_path).to_json();
    merged.update(overrides);
    return RunConfig::from_json(merged);
  }

  /// Prints the resolved config when requested; returns true when the
  /// command should stop afterwards.
  bool maybe_print(const RunConfig& cfg) const {
    if (!print_config) return false;
    std::cout << cfg.to_json().dump(2) << "\n";
    return true;
  }

 private:
  template <class T>
  void add_override(CLI::App* cmd, const std::string& flag, const std::string& key) {
    auto holder = std::make_shared<T>();
    cmd->add_option_function<T>(
        flag, [this, key](const T& v) { overrides[key] = v; });
    (void)holder;
  }

  void add_flag_override(CLI::App* cmd, const std::string& flag, const std::string& key) {
    cmd->add_flag_callback(flag, [this, key]() { overrides[key] = true; });
  }
};

struct LoadedRun {
  RunConfig cfg;
  Vocabulary vocab;
  XproModel model;
};

/// Rebuilds a model from `<run_dir>/config.json` + checkpoint.
LoadedRun load_run(const std::string& run_dir, const std::string& dataset_dir) {
  const fs::path dir(run_dir);
  RunConfig cfg = RunConfig::from_file((dir / "config.json").string());
  Vocabulary vocab = load_vocab(dataset_dir.empty() ? cfg.dataset_dir : dataset_dir);
  std::map<std::string, ParamGroup> hints;
  ParamStore loaded = load_checkpoint((dir / "checkpoint.ckpt").string());
  ParamStore grouped;
  for (const auto& [name, t] : loaded.items()) grouped.add(name, t, param_group_for(name));
  XproModel model(cfg, vocab.size(), std::move(grouped));
  return LoadedRun{std::move(cfg), std::move(vocab), std::move(model)};
}

int cmd_gen_corpus(const std::string& spec_path, const std::string& out_dir,
                   std::optional<std::uint64_t> seed, std::optional<int> samples) {
  CorpusSpec spec;
  if (spec_path.empty()) {
    spec = CorpusSpec::default_spec();
  } else {
    std::ifstream in(spec_path);
    if (!in) throw ConfigError("cannot open corpus spec " + spec_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("corpus spec " + spec_path + ": " + e.what());
    }
    spec = CorpusSpec::from_json(j);
  }
  if (seed) spec.seed = *seed;
  if (samples) spec.num_samples = *samples;
  spec.validate();

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const Vocabulary vocab = build_vocabulary(spec);
  const auto samples_all = generate_corpus(spec);
  const CorpusSplits splits = split_corpus(samples_all, spec.seed);
  save_dataset(splits.train, vocab, (dir / "train.jsonl").string());
  save_dataset(splits.val, vocab, (dir / "val.jsonl").string());
  save_dataset(splits.test, vocab, (dir / "test.jsonl").string());
  write_text(dir / "vocab.json", vocab.to_json().dump() + "\n");
  write_text(dir / "corpus_spec.json", spec.to_json().dump(2) + "\n");
  json manifest{{"command", "gen-corpus"},
                {"config_hash", hash_hex(fnv1a(spec.to_json().dump()))},
                {"seed", spec.seed},
                {"samples", {{"train", splits.train.size()},
                             {"val", splits.val.size()},
                             {"test", splits.test.size()}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << manifest["samples"].dump() << "\n";
  return 0;
}

int cmd_init_pm(const ConfigCli& cli, const std::string& out_path) {
  RunConfig cfg = cli.resolve();
  if (cli.maybe_print(cfg)) return 0;
  if (cfg.dataset_dir.empty()) throw ConfigError("init-pm: --dataset-dir is required");
  if (out_path.empty()) throw ConfigError("init-pm: --out is required");

  PrototypeMatrix pm;
  if (cfg.disable_prototype_init) {
    pm = random_prototype_matrix(cfg.num_categories, cfg.prototypes_per_category,
                                 cfg.feature_dim(), cfg.seed);
  } else {
    const Vocabulary vocab = load_vocab(cfg.dataset_dir);
    const auto train = load_split(cfg.dataset_dir, "train", vocab);
    if (train.empty()) throw DataError("init-pm: the training split is empty");
    if (static_cast<int>(train.front().labels.size()) != cfg.num_categories)
      throw DataError("init-pm: dataset labels do not match num_categories");
    ToyFeatureExtractor extractor(train.front().channels, vocab.size(), cfg.visual_feature_dim,
                                  cfg.textual_feature_dim, cfg.seed);
    ClassFeatureSets sets = build_class_feature_sets(train, extractor);
    pm = init_prototype_matrix(sets, cfg.prototypes_per_category, cfg.seed);
  }
  save_prototype_matrix(pm, out_path);
  json summary{{"categories", pm.num_categories},
               {"per_category", pm.per_category},
               {"dim", pm.dim},
               {"cluster_mean_fraction", pm.cluster_mean_fraction()},
               {"path", out_path}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_train(const ConfigCli& cli) {
  RunConfig cfg = cli.resolve();
  if (cli.maybe_print(cfg)) return 0;
  if (cfg.dataset_dir.empty()) throw ConfigError("train: --dataset-dir is required");
  if (cfg.run_dir.empty()) throw ConfigError("train: --run-dir is required");

  const Vocabulary vocab = load_vocab(cfg.dataset_dir);
  const auto train_set = load_split(cfg.dataset_dir, "train", vocab);
  std::vector<Sample> val_set;
  if (fs::exists(fs::path(cfg.dataset_dir) / "val.jsonl"))
    val_set = load_split(cfg.dataset_dir, "val", vocab);

  std::unique_ptr<PrototypeMatrix> pm;
  if (!cfg.disable_prototype_network) {
    if (cfg.pm_path.empty()) throw ConfigError("train: --pm is required unless the prototype network is disabled");
    pm = std::make_unique<PrototypeMatrix>(load_prototype_matrix(cfg.pm_path));
  }

  const fs::path dir(cfg.run_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");

  XproModel model(cfg, vocab.size(), pm.get());
  std::ofstream loss_csv(dir / "loss.csv", std::ios::trunc);
  TrainResult result =
      train_model(model, train_set, val_set, (dir / "checkpoint.ckpt").string(), &loss_csv);

  json summary{{"epochs", result.history.size()},
               {"best_epoch", result.best_epoch},
               {"best_val_bleu4", result.best_val_bleu4}};
  write_manifest(dir, "train", cfg,
                 json{{"artifacts", {{"checkpoint", "checkpoint.ckpt"},
                                     {"loss_csv", "loss.csv"},
                                     {"config", "config.json"}}},
                      {"result", summary}});
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& dataset_dir, const std::string& split,
             const std::string& out_path, std::optional<int> beam, std::optional<int> jobs,
             std::optional<std::string> label_mode) {
  LoadedRun run = load_run(run_dir, dataset_dir);
  const auto samples = load_split(dataset_dir.empty() ? run.cfg.dataset_dir : dataset_dir, split,
                                  run.vocab);
  if (samples.empty()) throw DataError("eval: split '" + split + "' is empty");
  GenOptions opt;
  opt.beam_size = beam.value_or(run.cfg.beam_size);
  opt.length_normalize = run.cfg.length_normalize;
  if (label_mode) opt.label_mode = *label_mode;
  const auto pairs = evaluation_pairs(run.model, samples, opt, jobs.value_or(run.cfg.jobs));
  const json report = metrics_report(pairs);
  const std::string text = report.dump() + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << text;
  return 0;
}

int cmd_generate(const std::string& run_dir, const std::string& dataset_dir,
                 const std::string& split, const std::string& out_path, std::optional<int> beam,
                 std::optional<int> jobs) {
  LoadedRun run = load_run(run_dir, dataset_dir);
  const auto samples = load_split(dataset_dir.empty() ? run.cfg.dataset_dir : dataset_dir, split,
                                  run.vocab);
  GenOptions opt;
  opt.beam_size = beam.value_or(run.cfg.beam_size);
  opt.length_normalize = run.cfg.length_normalize;
  const auto outputs = generate_all(run.model, samples, opt, jobs.value_or(run.cfg.jobs));
  std::ostringstream lines;
  for (size_t i = 0; i < samples.size(); ++i) {
    json rec{{"id", samples[i].id},
             {"tokens", outputs[i].tokens},
             {"text", run.vocab.detokenize(outputs[i].tokens)},
             {"log_prob", outputs[i].log_prob}};
    lines << rec.dump() << "\n";
  }
  if (out_path.empty())
    std::cout << lines.str();
  else
    write_text(out_path, lines.str());
  return 0;
}

json selection_json(const std::vector<std::vector<SelectedPrototype>>& heads) {
  json hs = json::array();
  for (const auto& head : heads) {
    json sels = json::array();
    for (const auto& s : head)
      sels.push_back({{"category", s.category}, {"slot", s.slot}, {"weight", s.weight}});
    hs.push_back(std::move(sels));
  }
  return hs;
}

int cmd_inspect(const std::string& run_dir, const std::string& dataset_dir,
                const std::string& split, const std::string& sample_id,
                const std::string& out_path) {
  LoadedRun run = load_run(run_dir, dataset_dir);
  const auto samples = load_split(dataset_dir.empty() ? run.cfg.dataset_dir : dataset_dir, split,
                                  run.vocab);
  const Sample* target = nullptr;
  for (const Sample& s : samples)
    if (s.id == sample_id) target = &s;
  if (!target) throw DataError("inspect: sample '" + sample_id + "' not found in " + split);

  GenOptions opt;
  opt.beam_size = run.cfg.beam_size;
  opt.length_normalize = run.cfg.length_normalize;
  InspectResult res = run.model.inspect(*target, opt);

  std::ostringstream lines;
  lines << json{{"kind", "report"},
                {"id", target->id},
                {"tokens", res.generated.tokens},
                {"text", run.vocab.detokenize(res.generated.tokens)},
                {"log_prob", res.generated.log_prob}}
               .dump()
        << "\n";
  for (const auto& p : res.patches)
    lines << json{{"kind", "patch"}, {"patch", p.patch}, {"heads", selection_json(p.heads)}}.dump()
          << "\n";
  for (const auto& t : res.tokens)
    lines << json{{"kind", "token"},
                  {"step", t.step},
                  {"token", run.vocab.token_of(t.token)},
                  {"aligned_patch", t.aligned_patch},
                  {"overlap", t.overlap},
                  {"heads", selection_json(t.heads)}}
                 .dump()
          << "\n";
  if (out_path.empty())
    std::cout << lines.str();
  else
    write_text(out_path, lines.str());
  return 0;
}

int cmd_export_pm_csv(const std::string& pm_path, const std::string& run_dir,
                      const std::string& out_path) {
  if (out_path.empty()) throw ConfigError("export-pm-csv: --out is required");
  PrototypeMatrix pm;
  if (!pm_path.empty()) {
    pm = load_prototype_matrix(pm_path);
  } else if (!run_dir.empty()) {
    const fs::path dir(run_dir);
    RunConfig cfg = RunConfig::from_file((dir / "config.json").string());
    ParamStore store = load_checkpoint((dir / "checkpoint.ckpt").string());
    pm = PrototypeMatrix::from_tensor(store.get("pm"), cfg.num_categories,
                                      cfg.prototypes_per_category);
  } else {
    throw ConfigError("export-pm-csv: provide --pm or --run-dir");
  }
  export_prototype_csv(pm, out_path);
  std::cout << json{{"rows", pm.num_categories * pm.per_category}, {"path", out_path}}.dump()
            << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"cross-modal prototype report generation toolkit"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic multimodal dataset");
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> gen_seed;
  std::optional<int> gen_samples;
  gen->add_option("--spec", spec_path, "corpus spec JSON (defaults to the built-in spec)");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", gen_seed, "override the spec seed");
  gen->add_option("--samples", gen_samples, "override the sample count");

  // init-pm
  auto* init = app.add_subcommand("init-pm", "initialize the prototype memory from a dataset");
  ConfigCli init_cfg;
  init_cfg.attach(init);
  std::string init_out;
  init->add_option("--out", init_out, "output prototype matrix file");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  ConfigCli train_cfg;
  train_cfg.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_run, eval_data, eval_split = "test", eval_out;
  std::optional<int> eval_beam, eval_jobs;
  std::optional<std::string> eval_label_mode;
  eval->add_option("--run-dir", eval_run)->required();
  eval->add_option("--dataset-dir", eval_data);
  eval->add_option("--split", eval_split);
  eval->add_option("--out", eval_out, "metrics JSON path");
  eval->add_option("--beam-size", eval_beam);
  eval->add_option("--jobs", eval_jobs);
  eval->add_option("--inference-label-mode", eval_label_mode);

  // generate
  auto* generate = app.add_subcommand("generate", "emit generated reports as JSON lines");
  std::string gen_run, gen_data, gen_split = "test", gen_out;
  std::optional<int> gen_beam, gen_jobs;
  generate->add_option("--run-dir", gen_run)->required();
  generate->add_option("--dataset-dir", gen_data);
  generate->add_option("--split", gen_split);
  generate->add_option("--out", gen_out);
  generate->add_option("--beam-size", gen_beam);
  generate->add_option("--jobs", gen_jobs);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump selected prototype indices for one sample");
  std::string ins_run, ins_data, ins_split = "test", ins_id, ins_out;
  inspect->add_option("--run-dir", ins_run)->required();
  inspect->add_option("--dataset-dir", ins_data);
  inspect->add_option("--split", ins_split);
  inspect->add_option("--sample-id", ins_id)->required();
  inspect->add_option("--out", ins_out);

  // export-pm-csv
  auto* exp = app.add_subcommand("export-pm-csv", "export a prototype matrix as CSV");
  std::string exp_pm, exp_run, exp_out;
  exp->add_option("--pm", exp_pm, "prototype matrix file");
  exp->add_option("--run-dir", exp_run, "run directory with a checkpoint");
  exp->add_option("--out", exp_out)->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_corpus(spec_path, out_dir, gen_seed, gen_samples);
    if (init->parsed()) return cmd_init_pm(init_cfg, init_out);
    if (train->parsed()) return cmd_train(train_cfg);
    if (eval->parsed())
      return cmd_eval(eval_run, eval_data, eval_split, eval_out, eval_beam, eval_jobs,
                      eval_label_mode);
    if (generate->parsed())
      return cmd_generate(gen_run, gen_data, gen_split, gen_out, gen_beam, gen_jobs);
    if (inspect->parsed()) return cmd_inspect(ins_run, ins_data, ins_split, ins_id, ins_out);
    if (exp->parsed()) return cmd_export_pm_csv(exp_pm, exp_run, exp_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace xpro
