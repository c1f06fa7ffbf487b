#include "xpro/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

namespace xpro {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  std::string bad;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      if (!bad.empty()) bad += ", ";
      bad += it.key();
    }
  }
  if (!bad.empty()) throw ConfigError(where + ": unknown keys: " + bad);
}

}  // namespace

void CorpusSpec::validate() const {
  if (categories.empty()) throw ConfigError("corpus spec: zero categories configured");
  if (num_samples < 0) throw ConfigError("corpus spec: num_samples must be >= 0");
  if (normal_probability < 0.0 || normal_probability > 1.0)
    throw ConfigError("corpus spec: normal_probability must lie in [0,1]");
  if (noise_level < 0.0) throw ConfigError("corpus spec: noise_level must be >= 0");
  if (grid_h < 1 || grid_w < 1 || channels < 1)
    throw ConfigError("corpus spec: grid dimensions must be positive");
  if (max_active_categories < 1 || max_active_categories > num_categories())
    throw ConfigError("corpus spec: max_active_categories must lie in [1, num categories]");

  // Worst case report: the longest max_active_categories sentences switch
  // from normal to finding wording.
  int base = 2;  // BOS / EOS
  std::vector<int> gains;
  for (size_t k = 0; k < categories.size(); ++k) {
    const auto& cat = categories[k];
    const auto finding = split_tokens(cat.finding_sentence);
    const auto normal = split_tokens(cat.normal_sentence);
    if (finding.empty() || normal.empty())
      throw ConfigError("corpus spec: category " + std::to_string(k) + " has an empty sentence");
    if (std::find(finding.begin(), finding.end(), cat.keyword) == finding.end())
      throw ConfigError("corpus spec: category " + std::to_string(k) +
                        " keyword '" + cat.keyword + "' missing from its finding sentence");
    for (size_t other = 0; other < categories.size(); ++other) {
      const auto norm_toks = split_tokens(categories[other].normal_sentence);
      if (std::find(norm_toks.begin(), norm_toks.end(), cat.keyword) != norm_toks.end())
        throw ConfigError("corpus spec: keyword '" + cat.keyword +
                          "' appears in a normal sentence, labels would not round-trip");
      if (other != k) {
        const auto find_toks = split_tokens(categories[other].finding_sentence);
        if (std::find(find_toks.begin(), find_toks.end(), cat.keyword) != find_toks.end())
          throw ConfigError("corpus spec: keyword '" + cat.keyword +
                            "' appears in category " + std::to_string(other) +
                            "'s finding sentence");
      }
    }
    if (cat.cells.empty())
      throw ConfigError("corpus spec: category " + std::to_string(k) + " has no signature cells");
    for (auto [r, c] : cat.cells)
      if (r < 0 || r >= grid_h || c < 0 || c >= grid_w)
        throw ConfigError("corpus spec: category " + std::to_string(k) +
                          " signature cell out of grid bounds");
    for (int ch : cat.channels)
      if (ch < 0 || ch >= channels)
        throw ConfigError("corpus spec: category " + std::to_string(k) +
                          " signature channel out of range");
    base += static_cast<int>(normal.size());
    gains.push_back(static_cast<int>(finding.size()) - static_cast<int>(normal.size()));
  }
  std::sort(gains.rbegin(), gains.rend());
  int worst = base;
  for (int i = 0; i < max_active_categories; ++i)
    if (gains[static_cast<size_t>(i)] > 0) worst += gains[static_cast<size_t>(i)];
  if (worst > max_report_len)
    throw ConfigError("corpus spec: worst-case report length " + std::to_string(worst) +
                      " exceeds max_report_len " + std::to_string(max_report_len));
}

CorpusSpec CorpusSpec::default_spec() {
  CorpusSpec spec;
  for (int k = 0; k < 14; ++k) {
    CategorySpec cat;
    const std::string ks = std::to_string(k);
    cat.finding_sentence = "zone" + ks + " has sign" + ks + " spot" + ks;
    cat.normal_sentence = "zone" + ks + " free" + ks + " calm" + ks;
    cat.keyword = "sign" + ks;
    cat.cells = {{k / 4, k % 4}};
    cat.channels = {(3 * k) % 32, (3 * k + 7) % 32, (3 * k + 13) % 32, (3 * k + 21) % 32};
    cat.amplitude = 2.0;
    spec.categories.push_back(std::move(cat));
  }
  return spec;
}

json CorpusSpec::to_json() const {
  json cats = json::array();
  for (const auto& c : categories) {
    json cells = json::array();
    for (auto [r, col] : c.cells) cells.push_back(json::array({r, col}));
    cats.push_back({{"finding_sentence", c.finding_sentence},
                    {"normal_sentence", c.normal_sentence},
                    {"keyword", c.keyword},
                    {"cells", cells},
                    {"channels", c.channels},
                    {"amplitude", c.amplitude}});
  }
  return json{{"seed", seed},
              {"num_samples", num_samples},
              {"normal_probability", normal_probability},
              {"noise_level", noise_level},
              {"max_active_categories", max_active_categories},
              {"grid_height", grid_h},
              {"grid_width", grid_w},
              {"channels", channels},
              {"max_report_len", max_report_len},
              {"categories", cats}};
}

CorpusSpec CorpusSpec::from_json(const json& j) {
  reject_unknown_keys(j,
                      {"seed", "num_samples", "normal_probability", "noise_level",
                       "max_active_categories", "grid_height", "grid_width", "channels",
                       "max_report_len", "categories"},
                      "corpus spec");
  CorpusSpec spec;
  spec.categories.clear();
  try {
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("num_samples")) spec.num_samples = j["num_samples"].get<int>();
    if (j.contains("normal_probability"))
      spec.normal_probability = j["normal_probability"].get<double>();
    if (j.contains("noise_level")) spec.noise_level = j["noise_level"].get<double>();
    if (j.contains("max_active_categories"))
      spec.max_active_categories = j["max_active_categories"].get<int>();
    if (j.contains("grid_height")) spec.grid_h = j["grid_height"].get<int>();
    if (j.contains("grid_width")) spec.grid_w = j["grid_width"].get<int>();
    if (j.contains("channels")) spec.channels = j["channels"].get<int>();
    if (j.contains("max_report_len")) spec.max_report_len = j["max_report_len"].get<int>();
    if (!j.contains("categories")) throw ConfigError("corpus spec: missing 'categories'");
    for (const auto& cj : j["categories"]) {
      reject_unknown_keys(
          cj, {"finding_sentence", "normal_sentence", "keyword", "cells", "channels", "amplitude"},
          "corpus spec category");
      CategorySpec c;
      c.finding_sentence = cj.at("finding_sentence").get<std::string>();
      c.normal_sentence = cj.at("normal_sentence").get<std::string>();
      c.keyword = cj.at("keyword").get<std::string>();
      for (const auto& cell : cj.at("cells"))
        c.cells.emplace_back(cell.at(0).get<int>(), cell.at(1).get<int>());
      if (cj.contains("channels")) c.channels = cj["channels"].get<std::vector<int>>();
      if (cj.contains("amplitude")) c.amplitude = cj["amplitude"].get<double>();
      spec.categories.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("corpus spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

Vocabulary build_vocabulary(const CorpusSpec& spec) {
  Vocabulary v;
  for (const auto& cat : spec.categories) {
    for (const auto& t : split_tokens(cat.finding_sentence)) v.add(t);
    for (const auto& t : split_tokens(cat.normal_sentence)) v.add(t);
  }
  return v;
}

std::vector<Sample> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Vocabulary vocab = build_vocabulary(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_level);

  // Pre-tokenize sentences once.
  std::vector<std::vector<int>> finding_ids, normal_ids;
  for (const auto& cat : spec.categories) {
    finding_ids.push_back(vocab.tokenize(split_tokens(cat.finding_sentence)));
    normal_ids.push_back(vocab.tokenize(split_tokens(cat.normal_sentence)));
  }

  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(spec.num_samples));
  const int ncat = spec.num_categories();
  std::vector<int> order(static_cast<size_t>(ncat));
  for (int u = 0; u < spec.num_samples; ++u) {
    Sample s;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "s%06d", u);
    s.id = idbuf;
    s.grid_h = spec.grid_h;
    s.grid_w = spec.grid_w;
    s.channels = spec.channels;
    s.labels.assign(static_cast<size_t>(ncat), 0);

    if (!(unit(rng) < spec.normal_probability)) {
      std::uniform_int_distribution<int> count_dist(1, spec.max_active_categories);
      const int active = count_dist(rng);
      for (int i = 0; i < ncat; ++i) order[static_cast<size_t>(i)] = i;
      for (int i = 0; i < active; ++i) {
        std::uniform_int_distribution<int> pick(i, ncat - 1);
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(pick(rng))]);
        s.labels[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
      }
    }

    s.image.assign(static_cast<size_t>(spec.grid_h) * spec.grid_w * spec.channels, 0.0);
    if (spec.noise_level > 0.0)
      for (double& x : s.image) x = noise(rng);
    for (int k = 0; k < ncat; ++k) {
      if (!s.labels[static_cast<size_t>(k)]) continue;
      const auto& cat = spec.categories[static_cast<size_t>(k)];
      for (auto [r, c] : cat.cells)
        for (int ch : cat.channels) s.pixel(r, c, ch) += cat.amplitude;
    }

    s.report.push_back(Vocabulary::kBos);
    for (int k = 0; k < ncat; ++k) {
      const auto& sent = s.labels[static_cast<size_t>(k)] ? finding_ids[static_cast<size_t>(k)]
                                                          : normal_ids[static_cast<size_t>(k)];
      s.report.insert(s.report.end(), sent.begin(), sent.end());
    }
    s.report.push_back(Vocabulary::kEos);
    samples.push_back(std::move(s));
  }
  return samples;
}

ReportLabeler::ReportLabeler(const CorpusSpec& spec, const Vocabulary& vocab) {
  for (const auto& cat : spec.categories) {
    if (!vocab.contains(cat.keyword))
      throw ConfigError("labeler: keyword '" + cat.keyword + "' not in vocabulary");
    keyword_ids_.push_back(vocab.id_of(cat.keyword));
  }
}

std::vector<int> ReportLabeler::label(const std::vector<int>& report) const {
  std::vector<int> y(keyword_ids_.size(), 0);
  for (size_t k = 0; k < keyword_ids_.size(); ++k)
    if (std::find(report.begin(), report.end(), keyword_ids_[k]) != report.end()) y[k] = 1;
  return y;
}

Sample flip_image(const Sample& s) {
  Sample out = s;
  for (int r = 0; r < s.grid_h; ++r)
    for (int c = 0; c < s.grid_w; ++c)
      for (int ch = 0; ch < s.channels; ++ch)
        out.pixel(r, c, ch) = s.pixel(r, s.grid_w - 1 - c, ch);
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const Vocabulary& vocab,
                  const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("dataset: cannot open " + path + " for writing");
  for (const Sample& s : samples) {
    json image = json::array();
    for (int r = 0; r < s.grid_h; ++r) {
      json row = json::array();
      for (int c = 0; c < s.grid_w; ++c) {
        json cell = json::array();
        for (int ch = 0; ch < s.channels; ++ch) cell.push_back(s.pixel(r, c, ch));
        row.push_back(std::move(cell));
      }
      image.push_back(std::move(row));
    }
    json report = json::array();
    for (int id : s.report) report.push_back(vocab.token_of(id));
    json rec{{"id", s.id}, {"image", image}, {"report", report}, {"labels", s.labels}};
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("dataset: write failed for " + path);
}

std::vector<Sample> load_dataset(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("dataset: cannot open " + path);
  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("dataset " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      Sample s;
      s.id = rec.at("id").get<std::string>();
      const auto& image = rec.at("image");
      s.grid_h = static_cast<int>(image.size());
      if (s.grid_h == 0) throw DataError("empty image grid");
      s.grid_w = static_cast<int>(image.at(0).size());
      s.channels = static_cast<int>(image.at(0).at(0).size());
      s.image.reserve(static_cast<size_t>(s.grid_h) * s.grid_w * s.channels);
      for (const auto& row : image) {
        if (static_cast<int>(row.size()) != s.grid_w) throw DataError("ragged image rows");
        for (const auto& cell : row) {
          if (static_cast<int>(cell.size()) != s.channels) throw DataError("ragged image cells");
          for (const auto& v : cell) s.image.push_back(v.get<double>());
        }
      }
      for (const auto& t : rec.at("report")) s.report.push_back(vocab.id_of(t.get<std::string>()));
      s.labels = rec.at("labels").get<std::vector<int>>();
      for (int b : s.labels)
        if (b != 0 && b != 1) throw DataError("labels must be 0/1");
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError("dataset " + path + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("dataset " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

CorpusSplits split_corpus(std::vector<Sample> samples, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5117));
  std::shuffle(samples.begin(), samples.end(), rng);
  const int n = static_cast<int>(samples.size());
  const int n_train = n * 70 / 100;
  const int n_val = n * 10 / 100;
  CorpusSplits out;
  out.train.assign(samples.begin(), samples.begin() + n_train);
  out.val.assign(samples.begin() + n_train, samples.begin() + n_train + n_val);
  out.test.assign(samples.begin() + n_train + n_val, samples.end());
  return out;
}

}  // namespace xpro
