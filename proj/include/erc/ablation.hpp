// Ablation harness: rebuilds the packed dataset per (context mode, speaker
// toggle) cell, trains per seed, and tabulates seed-mean test weighted-F1.
#pragma once

#include <string>
#include <vector>

#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"
#include "erc/training.hpp"

namespace erc {

struct AblationCell {
  ContextMode mode = ContextMode::both;
  bool prepend_speaker = true;

  bool operator==(const AblationCell&) const = default;

  std::string label() const {
    std::string s;
    switch (mode) {
      case ContextMode::none: s = "No past and future utterances"; break;
      case ContextMode::past_only: s = "Only past utterances"; break;
      case ContextMode::future_only: s = "Only future utterances"; break;
      case ContextMode::both: s = "Both past and future utterances"; break;
    }
    if (!prepend_speaker) s += ", without speaker names";
    return s;
  }
};

struct AblationSpec {
  std::vector<AblationCell> cells;
  std::vector<uint64_t> seeds;

  void validate() const {
    if (cells.empty()) throw ConfigError("ablation: no cells");
    if (seeds.empty()) throw ConfigError("ablation: no seeds");
    for (size_t i = 0; i < cells.size(); ++i)
      for (size_t j = i + 1; j < cells.size(); ++j)
        if (cells[i] == cells[j])
          throw ConfigError("ablation: duplicate cell \"" + cells[i].label() + "\"");
  }

  // The five configurations of the standard ablation block.
  static AblationSpec standard(std::vector<uint64_t> seeds) {
    AblationSpec spec;
    spec.cells = {{ContextMode::none, true},
                  {ContextMode::past_only, true},
                  {ContextMode::future_only, true},
                  {ContextMode::both, true},
                  {ContextMode::both, false}};
    spec.seeds = std::move(seeds);
    return spec;
  }
};

struct AblationRow {
  AblationCell cell;
  std::vector<double> per_seed_f1;
  double mean_f1 = 0.0;
};

inline std::vector<AblationRow> run_ablation(const AblationSpec& spec, const Corpus& corpus,
                                             const Vocab& vocab, const ModelConfig& model_cfg,
                                             const TrainConfig& train_cfg,
                                             const BuildConfig& base_build) {
  spec.validate();
  std::vector<AblationRow> rows;
  for (const auto& cell : spec.cells) {
    BuildConfig build = base_build;
    build.mode = cell.mode;
    build.prepend_speaker = cell.prepend_speaker;
    PackedDataset packed = build_packed_dataset(corpus, build, vocab);
    PackedViews views = views_of(packed);
    AblationRow row;
    row.cell = cell;
    SeedAggregate agg = run_seeds(model_cfg, views, train_cfg, spec.seeds);
    for (const auto& r : agg.runs) row.per_seed_f1.push_back(*r.test_weighted_f1);
    row.mean_f1 = agg.mean_test_f1;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string md = "| Configuration | mean weighted F1 (%) |\n|---|---|\n";
  for (const auto& r : rows)
    md += "| " + r.cell.label() + " | " + EvalReport::format_pct(r.mean_f1) + " |\n";
  return md;
}

inline json ablation_json(const std::vector<AblationRow>& rows) {
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"mode", to_string(r.cell.mode)},
                 {"prepend_speaker", r.cell.prepend_speaker},
                 {"label", r.cell.label()},
                 {"per_seed_f1", r.per_seed_f1},
                 {"mean_f1", r.mean_f1},
                 {"mean_f1_pct", EvalReport::format_pct(r.mean_f1)}});
  }
  return j;
}

}  // namespace erc
