#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "xpro/vocab.hpp"

namespace xpro {

/// One paired record: patch-feature grid, token-id report, binary labels.
struct Sample {
  std::string id;
  int grid_h = 0, grid_w = 0, channels = 0;
  std::vector<double> image;  // [grid_h][grid_w][channels], row-major
  std::vector<int> report;    // BOS ... EOS
  std::vector<int> labels;    // {0,1} per category

  double& pixel(int r, int c, int ch) {
    return image[(static_cast<size_t>(r) * grid_w + c) * channels + ch];
  }
  double pixel(int r, int c, int ch) const {
    return image[(static_cast<size_t>(r) * grid_w + c) * channels + ch];
  }
  int num_patches() const { return grid_h * grid_w; }
};

/// A category's sentence templates and its patch signature.
struct CategorySpec {
  std::string finding_sentence;
  std::string normal_sentence;
  std::string keyword;                     // token whose presence marks the category
  std::vector<std::pair<int, int>> cells;  // (row, col) grid cells
  std::vector<int> channels;               // channel indices receiving the amplitude
  double amplitude = 2.0;
};

/// Everything that determines a synthetic corpus. Generation is a pure
/// function of this structure.
struct CorpusSpec {
  std::uint64_t seed = 1;
  int num_samples = 1000;
  double normal_probability = 0.6;
  double noise_level = 0.5;
  int max_active_categories = 3;
  int grid_h = 4, grid_w = 4, channels = 32;
  int max_report_len = 48;
  std::vector<CategorySpec> categories;

  int num_categories() const { return static_cast<int>(categories.size()); }

  /// Throws ConfigError on any violated constraint (empty categories,
  /// signature out of bounds, worst-case report longer than max_report_len,
  /// keyword missing from the finding sentence, ...).
  void validate() const;

  /// The 14-category toy default.
  static CorpusSpec default_spec();

  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static CorpusSpec from_json(const nlohmann::json& j);
};

/// Vocabulary implied by the spec's templates: reserved tokens plus template
/// tokens in first-appearance order.
Vocabulary build_vocabulary(const CorpusSpec& spec);

/// Deterministic corpus from the spec's seed. Active categories imprint
/// their patch signatures over Gaussian noise; the report concatenates one
/// sentence per category (finding sentence iff active) in category order.
std::vector<Sample> generate_corpus(const CorpusSpec& spec);

/// Rule-based stand-in for an automatic report labeler: bit k is set iff
/// category k's keyword token occurs in the report.
class ReportLabeler {
 public:
  ReportLabeler(const CorpusSpec& spec, const Vocabulary& vocab);
  std::vector<int> label(const std::vector<int>& report) const;

 private:
  std::vector<int> keyword_ids_;
};

/// Horizontal mirror of the patch grid (columns reversed).
Sample flip_image(const Sample& s);

/// Line-delimited JSON with keys id / image / report / labels.
void save_dataset(const std::vector<Sample>& samples, const Vocabulary& vocab,
                  const std::string& path);
std::vector<Sample> load_dataset(const std::string& path, const Vocabulary& vocab);

struct CorpusSplits {
  std::vector<Sample> train, val, test;
};

/// Seeded shuffle followed by a 70/10/20 split.
CorpusSplits split_corpus(std::vector<Sample> samples, std::uint64_t seed);

}  // namespace xpro
