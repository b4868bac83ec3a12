// Weighted-F1 metric, per-class precision/recall/F1, confusion matrix, and
// whole-split model evaluation.
#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "erc/model.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/util.hpp"

namespace erc {

// Support-weighted mean of per-class F1. Zero-denominator precision/recall/F1
// are taken as 0; classes absent from gold carry zero weight.
inline double weighted_f1(const std::vector<int>& predictions, const std::vector<int>& gold,
                          int n_classes) {
  if (predictions.empty()) throw DataError("weighted_f1: empty input");
  if (predictions.size() != gold.size())
    throw DataError("weighted_f1: prediction/gold size mismatch");
  std::vector<long> tp(static_cast<size_t>(n_classes), 0);
  std::vector<long> pred_count(static_cast<size_t>(n_classes), 0);
  std::vector<long> gold_count(static_cast<size_t>(n_classes), 0);
  for (size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], g = gold[i];
    if (p < 0 || p >= n_classes || g < 0 || g >= n_classes)
      throw DataError("weighted_f1: class out of range at position " + std::to_string(i));
    ++pred_count[static_cast<size_t>(p)];
    ++gold_count[static_cast<size_t>(g)];
    if (p == g) ++tp[static_cast<size_t>(p)];
  }
  double acc = 0.0;
  const double n = static_cast<double>(predictions.size());
  for (int c = 0; c < n_classes; ++c) {
    const size_t sc = static_cast<size_t>(c);
    const double precision =
        pred_count[sc] == 0 ? 0.0 : static_cast<double>(tp[sc]) / static_cast<double>(pred_count[sc]);
    const double recall =
        gold_count[sc] == 0 ? 0.0 : static_cast<double>(tp[sc]) / static_cast<double>(gold_count[sc]);
    const double f1 =
        precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    acc += (static_cast<double>(gold_count[sc]) / n) * f1;
  }
  return acc;
}

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;    // gold count
  long predicted = 0;  // prediction count
};

struct EvalReport {
  std::vector<std::vector<long>> confusion;  // [gold][pred]
  std::vector<ClassMetrics> per_class;
  double weighted_f1 = 0.0;
  long n = 0;
  std::vector<std::string> class_names;

  json to_json() const {
    json per = json::array();
    for (const auto& c : per_class)
      per.push_back({{"class", c.name},
                     {"precision", c.precision},
                     {"recall", c.recall},
                     {"f1", c.f1},
                     {"support", c.support},
                     {"predicted", c.predicted}});
    return {{"n", n},
            {"weighted_f1", weighted_f1},
            {"weighted_f1_pct", format_pct(weighted_f1)},
            {"classes", class_names},
            {"per_class", per},
            {"confusion_gold_by_pred", confusion}};
  }

  // Scores live as fractions; reports show two-decimal percentages.
  static std::string format_pct(double fraction) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << fraction * 100.0;
    return ss.str();
  }
};

inline EvalReport eval_report_from_predictions(const std::vector<int>& predictions,
                                               const std::vector<int>& gold,
                                               const std::vector<std::string>& class_names) {
  const int c = static_cast<int>(class_names.size());
  EvalReport rep;
  rep.class_names = class_names;
  rep.n = static_cast<long>(predictions.size());
  rep.weighted_f1 = weighted_f1(predictions, gold, c);
  rep.confusion.assign(static_cast<size_t>(c), std::vector<long>(static_cast<size_t>(c), 0));
  for (size_t i = 0; i < predictions.size(); ++i)
    ++rep.confusion[static_cast<size_t>(gold[i])][static_cast<size_t>(predictions[i])];
  for (int k = 0; k < c; ++k) {
    const size_t sk = static_cast<size_t>(k);
    ClassMetrics m;
    m.name = class_names[sk];
    long tp = rep.confusion[sk][sk];
    for (int j = 0; j < c; ++j) {
      m.support += rep.confusion[sk][static_cast<size_t>(j)];
      m.predicted += rep.confusion[static_cast<size_t>(j)][sk];
    }
    m.precision = m.predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(m.predicted);
    m.recall = m.support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(m.support);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0
                                         : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    rep.per_class.push_back(std::move(m));
  }
  return rep;
}

inline std::vector<int> predict_classes(const ModelParams& params,
                                        const std::vector<const PackedSequence*>& seqs) {
  std::vector<int> out(seqs.size());
  parallel_for(seqs.size(), [&](size_t i) { out[i] = forward(params, seqs[i]->ids).predicted; });
  return out;
}

inline EvalReport evaluate(const ModelParams& params,
                           const std::vector<const PackedSequence*>& seqs,
                           const std::vector<std::string>& class_names) {
  if (params.config.n_classes != static_cast<int>(class_names.size()))
    throw DataError("evaluate: checkpoint has " + std::to_string(params.config.n_classes) +
                    " classes but the dataset has " + std::to_string(class_names.size()));
  if (seqs.empty()) throw DataError("evaluate: empty split");
  std::vector<int> gold(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) gold[i] = seqs[i]->label.class_index;
  return eval_report_from_predictions(predict_classes(params, seqs), gold, class_names);
}

// Mean -log p(gold) over a split; the learning-rate-search objective.
inline double mean_cross_entropy(const ModelParams& params,
                                 const std::vector<const PackedSequence*>& seqs) {
  if (seqs.empty()) throw DataError("mean_cross_entropy: empty split");
  std::vector<double> ce(seqs.size());
  parallel_for(seqs.size(), [&](size_t i) {
    Prediction p = forward(params, seqs[i]->ids);
    ce[i] = -std::log(std::max(p.probs(seqs[i]->label.class_index), 1e-300));
  });
  double sum = 0.0;
  for (double v : ce) sum += v;
  return sum / static_cast<double>(seqs.size());
}

}  // namespace erc
