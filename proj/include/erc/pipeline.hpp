// End-to-end experiment runner: corpus -> vocab -> build -> train -> eval ->
// inspect, everything written under one run directory with a manifest. A run
// directory is owned by one process at a time (lock file), and a run is fully
// reproducible from the persisted config snapshot.
#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "erc/ablation.hpp"
#include "erc/attnreport.hpp"
#include "erc/corpus.hpp"
#include "erc/evaluation.hpp"
#include "erc/model.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"
#include "erc/training.hpp"
#include "erc/util.hpp"

namespace erc {

inline CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "meld_csv") return CorpusFormat::meld_csv;
  if (s == "iemocap_json") return CorpusFormat::iemocap_json;
  if (s == "native_jsonl") return CorpusFormat::native_jsonl;
  throw ConfigError("unknown corpus format \"" + s + "\" (meld_csv|iemocap_json|native_jsonl)");
}

inline std::string to_string(CorpusFormat f) {
  switch (f) {
    case CorpusFormat::meld_csv: return "meld_csv";
    case CorpusFormat::iemocap_json: return "iemocap_json";
    case CorpusFormat::native_jsonl: return "native_jsonl";
  }
  return "?";
}

struct ExperimentConfig {
  uint64_t seed = 0;
  // Corpus source: a file (path+format) or a synthetic generator config.
  std::string corpus_path;
  CorpusFormat corpus_format = CorpusFormat::native_jsonl;
  std::optional<SyntheticConfig> synthetic;
  bool assign_names = false;

  int vocab_size = 4096;
  BuildConfig build;
  ModelConfig model;  // vocab_size / n_classes / max_positions filled at run time
  TrainConfig train;
  int inspect_n_correct = 10;
  int inspect_n_incorrect = 10;

  json to_json() const {
    json corpus;
    if (synthetic)
      corpus = {{"synthetic", synthetic->to_json()}};
    else
      corpus = {{"path", corpus_path}, {"format", erc::to_string(corpus_format)}};
    return {{"seed", seed},
            {"corpus", corpus},
            {"assign_names", assign_names},
            {"vocab", {{"size", vocab_size}}},
            {"build", build.to_json()},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"inspect", {{"n_correct", inspect_n_correct}, {"n_incorrect", inspect_n_incorrect}}}};
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", static_cast<uint64_t>(0));
    if (!j.contains("corpus")) throw ConfigError("experiment config: missing \"corpus\"");
    const json& jc = j.at("corpus");
    if (jc.contains("synthetic")) {
      c.synthetic = SyntheticConfig::from_json(jc.at("synthetic"));
    } else {
      if (!jc.contains("path")) throw ConfigError("experiment config: corpus needs \"path\" or \"synthetic\"");
      c.corpus_path = jc.at("path").get<std::string>();
      c.corpus_format = corpus_format_from_string(jc.value("format", "native_jsonl"));
    }
    c.assign_names = j.value("assign_names", false);
    if (j.contains("vocab")) c.vocab_size = j.at("vocab").value("size", 4096);
    if (j.contains("build")) c.build = BuildConfig::from_json(j.at("build"));
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("inspect")) {
      c.inspect_n_correct = j.at("inspect").value("n_correct", 10);
      c.inspect_n_incorrect = j.at("inspect").value("n_incorrect", 10);
    }
    return c;
  }
};

// Exclusive .lock file; removed when the owner goes away.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir) : path_(run_dir / ".lock") {
    std::filesystem::create_directories(run_dir);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw ConfigError("run directory is locked by another process: " + run_dir.string());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct PipelineResult {
  std::filesystem::path run_dir;
  json manifest;
};

namespace detail {

struct ManifestWriter {
  std::filesystem::path path;
  json stages = json::array();
  std::optional<std::string> failed_stage;

  void flush() const {
    json m = {{"stages", stages},
              {"failed_stage", failed_stage ? json(*failed_stage) : json(nullptr)}};
    write_file(path, m.dump(2) + "\n");
  }

  void done(const std::string& name, const std::vector<std::string>& outputs) {
    stages.push_back({{"name", name}, {"status", "ok"}, {"outputs", outputs}});
    flush();
  }

  void failed(const std::string& name, const std::string& error) {
    stages.push_back({{"name", name}, {"status", "failed"}, {"error", error}});
    failed_stage = name;
    flush();
  }
};

}  // namespace detail

// Runs all six stages. Partial artifacts stay on failure and the manifest
// marks the failed stage; the exception propagates to the caller.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg,
                                   const std::filesystem::path& run_dir) {
  // Validate the corpus source before touching the run directory.
  if (!cfg.synthetic) {
    if (cfg.corpus_path.empty())
      throw ConfigError("experiment config: corpus path is empty");
    if (!std::filesystem::exists(cfg.corpus_path))
      throw ConfigError("corpus path does not exist: " + cfg.corpus_path);
  }

  RunLock lock(run_dir);
  write_file(run_dir / "config.json", cfg.to_json().dump(2) + "\n");
  detail::ManifestWriter manifest{run_dir / "manifest.json", json::array(), std::nullopt};

  auto stage = [&](const std::string& name, const std::vector<std::string>& outputs,
                   const std::function<void()>& body) {
    try {
      body();
      manifest.done(name, outputs);
    } catch (const std::exception& e) {
      manifest.failed(name, e.what());
      throw;
    }
  };

  Corpus corpus;
  stage("corpus", {"corpus.jsonl"}, [&] {
    if (cfg.synthetic)
      corpus = generate_synthetic(*cfg.synthetic, cfg.seed);
    else
      corpus = load_corpus(cfg.corpus_path, cfg.corpus_format);
    if (cfg.assign_names) corpus = assign_iemocap_names(corpus, cfg.seed);
    save_native_jsonl(corpus, run_dir / "corpus.jsonl");
  });

  Vocab vocab;
  stage("vocab", {"vocab.json"}, [&] {
    vocab = train_vocab(corpus, cfg.vocab_size);
    save_vocab(vocab, run_dir / "vocab.json");
  });

  PackedDataset packed;
  stage("build", {"packed.jsonl"}, [&] {
    packed = build_packed_dataset(corpus, cfg.build, vocab);
    save_packed_jsonl(packed, run_dir / "packed.jsonl");
  });

  ModelConfig model_cfg = cfg.model;
  TrainOutput trained;
  stage("train", {"train/checkpoint.bin", "train/metrics.jsonl", "train/result.json"}, [&] {
    model_cfg.vocab_size = vocab.size();
    model_cfg.n_classes = static_cast<int>(packed.class_names.size());
    if (model_cfg.max_positions < cfg.build.max_total_tokens)
      model_cfg.max_positions = cfg.build.max_total_tokens;
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    trained = train(model_cfg, views_of(packed), train_cfg);
    save_checkpoint(trained.best_params, run_dir / "train" / "checkpoint.bin");
    std::string lines;
    for (const auto& e : trained.result.epochs) lines += e.to_json().dump() + "\n";
    write_file(run_dir / "train" / "metrics.jsonl", lines);
    write_file(run_dir / "train" / "result.json", trained.result.to_json().dump(2) + "\n");
    if (trained.result.diverged) throw NumericError("training diverged; last state saved");
  });

  stage("eval", {"eval/report.json"}, [&] {
    EvalReport rep = evaluate(trained.best_params, views_of(packed).test, packed.class_names);
    write_file(run_dir / "eval" / "report.json", rep.to_json().dump(2) + "\n");
  });

  stage("inspect", {"inspect/summary.json"}, [&] {
    auto test = views_of(packed).test;
    std::vector<int> preds = predict_classes(trained.best_params, test);
    std::vector<bool> correct(test.size());
    for (size_t i = 0; i < test.size(); ++i)
      correct[i] = preds[i] == test[i]->label.class_index;
    long n_c = std::count(correct.begin(), correct.end(), true);
    long n_i = static_cast<long>(correct.size()) - n_c;
    // Clamp to what the test split actually offers.
    const int want_c = std::min<long>(cfg.inspect_n_correct, n_c);
    const int want_i = std::min<long>(cfg.inspect_n_incorrect, n_i);
    auto picks = sample_for_analysis(correct, want_c, want_i, cfg.seed);

    json samples = json::array();
    std::vector<HighlightReport> reports;
    for (size_t k = 0; k < picks.size(); ++k) {
      const PackedSequence& ps = *test[picks[k]];
      AttentionTensor attn;
      Prediction pred = forward(trained.best_params, ps.ids, &attn);
      HighlightReport rep = make_highlight_report(ps, vocab, attn, pred, packed.class_names);
      std::string file = "sample_" + std::to_string(k) + "_" + ps.dialogue_id + "_t" +
                         std::to_string(ps.index) + ".html";
      write_file(run_dir / "inspect" / file, render_report(rep));
      samples.push_back({{"file", file},
                         {"dialogue_id", ps.dialogue_id},
                         {"index", ps.index},
                         {"predicted", rep.predicted_name},
                         {"gold", ps.label.class_name},
                         {"correct", rep.correct},
                         {"cls_attends_current_speaker", rep.cls_attends_current_speaker}});
      reports.push_back(std::move(rep));
    }
    json summary = {{"requested", {{"n_correct", cfg.inspect_n_correct},
                                   {"n_incorrect", cfg.inspect_n_incorrect}}},
                    {"sampled", {{"n_correct", want_c}, {"n_incorrect", want_i}}},
                    {"samples", samples}};
    if (!reports.empty()) summary["speaker_attention"] = speaker_attention_stat(reports).to_json();
    write_file(run_dir / "inspect" / "summary.json", summary.dump(2) + "\n");
  });

  return {run_dir, json{{"stages", manifest.stages}, {"failed_stage", nullptr}}};
}

}  // namespace erc
