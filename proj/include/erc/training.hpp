// Training protocol: AdamW-style adaptive updates (optionally with the L2
// term inside the loss), linear warmup/decay schedule, per-epoch validation
// with best-weighted-F1 model selection, log-uniform learning-rate search,
// and multi-seed aggregation.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "erc/evaluation.hpp"
#include "erc/model.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/util.hpp"

namespace erc {

struct TrainConfig {
  int epochs = 5;
  double lambda = 0.01;  // L2 regularization rate
  double peak_lr = 1e-4;
  int batch_size = 16;
  double warmup_fraction = 0.2;
  uint64_t seed = 0;
  L2Mode l2_mode = L2Mode::decoupled;
  bool grad_clip = true;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
      throw ConfigError("train: warmup_fraction must be in (0, 1)");
    if (peak_lr <= 0.0) throw ConfigError("train: peak_lr must be positive");
    if (lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
  }

  json to_json() const {
    return {{"epochs", epochs},
            {"lambda", lambda},
            {"peak_lr", peak_lr},
            {"batch_size", batch_size},
            {"warmup_fraction", warmup_fraction},
            {"seed", seed},
            {"l2_mode", to_string(l2_mode)},
            {"grad_clip", grad_clip},
            {"clip_norm", clip_norm},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", 5);
    c.lambda = j.value("lambda", 0.01);
    c.peak_lr = j.value("peak_lr", 1e-4);
    c.batch_size = j.value("batch_size", 16);
    c.warmup_fraction = j.value("warmup_fraction", 0.2);
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    c.l2_mode = l2_mode_from_string(j.value("l2_mode", "decoupled"));
    c.grad_clip = j.value("grad_clip", true);
    c.clip_norm = j.value("clip_norm", 1.0);
    c.beta1 = j.value("beta1", 0.9);
    c.beta2 = j.value("beta2", 0.999);
    c.adam_eps = j.value("adam_eps", 1e-8);
    return c;
  }
};

// Piecewise-linear schedule: 0 -> peak over the first ceil(wf * total) steps,
// then peak -> 0 over the remainder.
inline double lr_at(long step, long total_steps, double peak_lr, double warmup_fraction = 0.2) {
  if (total_steps <= 0) throw ConfigError("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  const long warmup = static_cast<long>(
      std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step <= warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

struct EpochMetrics {
  int epoch = 0;  // 0 = initial model (epochs == 0 runs only)
  std::optional<double> train_loss;
  double val_weighted_f1 = 0.0;

  json to_json() const {
    json j = {{"epoch", epoch}, {"val_weighted_f1", val_weighted_f1}};
    if (train_loss) j["train_loss"] = *train_loss;
    return j;
  }
};

struct RunResult {
  std::vector<EpochMetrics> epochs;
  int selected_epoch = 0;
  double selected_val_f1 = 0.0;
  std::optional<double> test_weighted_f1;
  uint64_t seed = 0;
  bool diverged = false;

  json to_json() const {
    json je = json::array();
    for (const auto& e : epochs) je.push_back(e.to_json());
    json j = {{"seed", seed},
              {"epochs", je},
              {"selected_epoch", selected_epoch},
              {"selected_val_f1", selected_val_f1},
              {"diverged", diverged}};
    if (test_weighted_f1) j["test_weighted_f1"] = *test_weighted_f1;
    return j;
  }
};

struct TrainOutput {
  RunResult result;
  ModelParams best_params;   // highest validation weighted-F1
  ModelParams final_params;  // end of the last epoch
};

// Views into a packed dataset by split.
struct PackedViews {
  std::vector<const PackedSequence*> train, val, test;
};

inline PackedViews views_of(const PackedDataset& ds) {
  return {ds.split("train"), ds.split("val"), ds.split("test")};
}

namespace detail {

struct AdamState {
  std::vector<MatrixXd> m, v;
  long t = 0;

  explicit AdamState(const ModelParams& params) {
    params.visit([&](const Param& p) {
      m.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
      v.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    });
  }

  void update(ModelParams& params, double lr, const TrainConfig& cfg) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    size_t i = 0;
    params.visit([&](Param& p) {
      MatrixXd& mi = m[i];
      MatrixXd& vi = v[i];
      mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * p.grad;
      vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
      Eigen::ArrayXXd step = (mi.array() / bc1) / ((vi.array() / bc2).sqrt() + cfg.adam_eps);
      if (cfg.l2_mode == L2Mode::decoupled && p.decay && cfg.lambda != 0.0)
        step += cfg.lambda * p.value.array();
      p.value.array() -= lr * step;
      ++i;
    });
  }
};

inline void clip_gradients(ModelParams& params, double max_norm) {
  double sq = 0.0;
  params.visit([&](const Param& p) { sq += p.grad.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    params.visit([&](Param& p) { p.grad *= scale; });
  }
}

// Length-bucketed batches: shuffle, stable-sort by length, chunk, then
// shuffle the chunk order. Deterministic in the rng state.
inline std::vector<std::vector<size_t>> make_batches(const std::vector<size_t>& lengths,
                                                     int batch_size, Rng& rng) {
  std::vector<size_t> idx(lengths.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(idx.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace detail

inline TrainOutput train(const ModelConfig& model_cfg, const PackedViews& data,
                         const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (data.train.empty()) throw DataError("train: empty training split");
  if (data.val.empty()) throw DataError("train: empty validation split");

  const long n = static_cast<long>(data.train.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

  ModelParams params = init_model(model_cfg, cfg.seed);
  detail::AdamState adam(params);

  std::vector<size_t> lengths(data.train.size());
  for (size_t i = 0; i < data.train.size(); ++i) lengths[i] = data.train[i]->ids.size();

  auto val_f1 = [&](const ModelParams& p) {
    std::vector<int> gold(data.val.size());
    for (size_t i = 0; i < data.val.size(); ++i) gold[i] = data.val[i]->label.class_index;
    return weighted_f1(predict_classes(p, data.val), gold, model_cfg.n_classes);
  };

  TrainOutput out;
  out.result.seed = cfg.seed;
  bool have_best = false;
  long step = 0;

  if (cfg.epochs == 0) {
    const double f1 = val_f1(params);
    out.result.epochs.push_back({0, std::nullopt, f1});
    out.result.selected_epoch = 0;
    out.result.selected_val_f1 = f1;
    out.best_params = params;
    have_best = true;
  }

  std::vector<MatrixXd> pre_update;  // values snapshot, for divergence rollback
  for (int epoch = 1; epoch <= cfg.epochs && !out.result.diverged; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, 201, static_cast<uint64_t>(epoch)));
    auto batches = detail::make_batches(lengths, cfg.batch_size, epoch_rng);
    double loss_sum = 0.0;
    long n_batches = 0;
    for (const auto& batch : batches) {
      ++step;
      std::vector<std::vector<int>> seqs;
      std::vector<int> labels;
      seqs.reserve(batch.size());
      labels.reserve(batch.size());
      for (size_t bi : batch) {
        seqs.push_back(data.train[bi]->ids);
        labels.push_back(data.train[bi]->label.class_index);
      }
      try {
        LossResult lr = loss_and_grad(params, seqs, labels, cfg.lambda, cfg.l2_mode,
                                      derive_seed(cfg.seed, 301, static_cast<uint64_t>(step)));
        loss_sum += lr.total;
        ++n_batches;
      } catch (const NumericError&) {
        // The params that produced the non-finite loss are still the last
        // finite state; stop here and let the caller persist what we have.
        out.result.diverged = true;
        break;
      }
      if (cfg.grad_clip) detail::clip_gradients(params, cfg.clip_norm);
      pre_update.clear();
      params.visit([&](const Param& p) { pre_update.push_back(p.value); });
      adam.update(params, lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction), cfg);
      if (!params.all_finite()) {
        size_t i = 0;
        params.visit([&](Param& p) { p.value = pre_update[i++]; });
        out.result.diverged = true;
        break;
      }
    }
    if (out.result.diverged) break;
    const double f1 = val_f1(params);
    out.result.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(std::max(1L, n_batches)), f1});
    if (!have_best || f1 > out.result.selected_val_f1) {
      out.result.selected_val_f1 = f1;
      out.result.selected_epoch = epoch;
      out.best_params = params;
      have_best = true;
    }
  }

  if (!have_best) out.best_params = params;  // diverged before the first eval
  out.final_params = params;
  if (!data.test.empty() && !out.result.diverged) {
    std::vector<int> gold(data.test.size());
    for (size_t i = 0; i < data.test.size(); ++i) gold[i] = data.test[i]->label.class_index;
    out.result.test_weighted_f1 =
        weighted_f1(predict_classes(out.best_params, data.test), gold, model_cfg.n_classes);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Peak-learning-rate search: log-uniform candidates in [1e-6, 1e-4], each
// scored by validation cross-entropy after a short training run on a 10%
// train subset (and an equally sized validation subset).

struct LrTrial {
  double lr = 0.0;
  double objective = 0.0;  // validation cross-entropy; +inf when diverged
};

struct LrSearchResult {
  double best_lr = 0.0;
  std::vector<LrTrial> trials;
};

inline LrSearchResult search_peak_lr(
    const ModelConfig& model_cfg, const PackedViews& data, const TrainConfig& base, int trials,
    const std::function<double(int trial, double lr)>& objective = nullptr) {
  if (trials < 1) throw ConfigError("lr-search: trials must be >= 1");

  std::function<double(int, double)> eval_trial = objective;
  PackedViews subset;
  if (!eval_trial) {
    if (data.train.empty() || data.val.empty())
      throw DataError("lr-search: train and val splits must be nonempty");
    auto take = [&](const std::vector<const PackedSequence*>& pool, size_t count,
                    uint64_t stream) {
      std::vector<size_t> idx(pool.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      Rng rng(derive_seed(base.seed, stream));
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<const PackedSequence*> out;
      for (size_t i = 0; i < std::min(count, idx.size()); ++i) out.push_back(pool[idx[i]]);
      return out;
    };
    const size_t n_train = static_cast<size_t>(
        std::ceil(0.10 * static_cast<double>(data.train.size())));
    subset.train = take(data.train, n_train, 401);
    subset.val = take(data.val, n_train, 402);
    eval_trial = [&subset, &model_cfg, &base](int, double lr) {
      TrainConfig t = base;
      t.peak_lr = lr;
      TrainOutput out = train(model_cfg, subset, t);
      if (out.result.diverged) return std::numeric_limits<double>::infinity();
      return mean_cross_entropy(out.final_params, subset.val);
    };
  }

  Rng rng(derive_seed(base.seed, 400));
  LrSearchResult res;
  bool any_finite = false;
  for (int k = 0; k < trials; ++k) {
    LrTrial trial;
    trial.lr = std::pow(10.0, rand_uniform(rng, -6.0, -4.0));
    try {
      trial.objective = eval_trial(k, trial.lr);
    } catch (const NumericError&) {
      trial.objective = std::numeric_limits<double>::infinity();
    }
    res.trials.push_back(trial);
    any_finite = any_finite || std::isfinite(trial.objective);
  }
  if (!any_finite) throw NumericError("lr-search: all trials diverged");
  size_t best = 0;
  for (size_t k = 1; k < res.trials.size(); ++k)
    if (res.trials[k].objective < res.trials[best].objective) best = k;
  res.best_lr = res.trials[best].lr;
  return res;
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation

struct SeedAggregate {
  std::vector<RunResult> runs;
  double mean_test_f1 = 0.0;

  json to_json() const {
    json jr = json::array();
    for (const auto& r : runs) jr.push_back(r.to_json());
    return {{"runs", jr}, {"mean_test_weighted_f1", mean_test_f1}};
  }
};

inline SeedAggregate run_seeds(const ModelConfig& model_cfg, const PackedViews& data,
                               const TrainConfig& base, const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("run_seeds: need at least one seed");
  if (data.test.empty()) throw DataError("run_seeds: empty test split");
  SeedAggregate agg;
  double sum = 0.0;
  for (uint64_t s : seeds) {
    TrainConfig cfg = base;
    cfg.seed = s;
    TrainOutput out = train(model_cfg, data, cfg);
    if (!out.result.test_weighted_f1)
      throw NumericError("run_seeds: seed " + std::to_string(s) + " produced no test score");
    sum += *out.result.test_weighted_f1;
    agg.runs.push_back(std::move(out.result));
  }
  agg.mean_test_f1 = sum / static_cast<double>(seeds.size());
  return agg;
}

}  // namespace erc
