// erc: speaker-aware emotion recognition in conversation, end to end.
//
// Subcommands: ingest, stats, tokenizer train, build, train, lr-search,
// eval, ablate, inspect, pipeline. Exit codes: 0 ok, 2 config error,
// 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "erc/ablation.hpp"
#include "erc/attnreport.hpp"
#include "erc/corpus.hpp"
#include "erc/evaluation.hpp"
#include "erc/model.hpp"
#include "erc/pipeline.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"
#include "erc/training.hpp"

namespace fs = std::filesystem;
using erc::json;

namespace {

json load_json_file(const std::string& path) {
  try {
    return json::parse(erc::read_file(path));
  } catch (const json::exception& e) {
    throw erc::ConfigError(path + ": " + e.what());
  }
}

// Packed data may be a single .jsonl file or a directory of them.
erc::PackedDataset load_packed(const std::string& path) {
  if (!fs::is_directory(path)) return erc::load_packed_jsonl(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw erc::DataError(path + ": no packed .jsonl files");
  erc::PackedDataset ds = erc::load_packed_jsonl(files[0]);
  for (size_t i = 1; i < files.size(); ++i) {
    erc::PackedDataset more = erc::load_packed_jsonl(files[i]);
    if (more.class_names != ds.class_names)
      throw erc::DataError(path + ": packed files disagree on the class set");
    for (auto& s : more.seqs) ds.seqs.push_back(std::move(s));
  }
  return ds;
}

std::vector<const erc::PackedSequence*> pick_split(const erc::PackedDataset& ds,
                                                   const std::string& split) {
  auto v = ds.split(split);
  if (v.empty())
    throw erc::DataError("packed data has no sequences in split \"" + split + "\"");
  return v;
}

void print_stats(const erc::CorpusStats& stats) {
  std::cout << "split      dialogues  utterances  mean/dlg   std\n";
  for (const auto& [split, st] : stats.by_split) {
    std::printf("%-10s %9ld %11ld", split.c_str(), st.dialogues, st.utterances);
    if (st.defined)
      std::printf("  %8.2f  %5.2f\n", st.mean_utterances, st.std_utterances);
    else
      std::printf("         -      -\n");
  }
}

struct TrainCliArgs {
  std::string packed, vocab, config, out;
  uint64_t seed = 0;
  bool seed_given = false;
  int epochs = -1;
  double peak_lr = 0.0;
};

// Merge config-file values with flag overrides; the merged result is what
// gets snapshotted into the run directory.
std::pair<erc::ModelConfig, erc::TrainConfig> resolve_train_config(const TrainCliArgs& a,
                                                                   int vocab_size, int n_classes,
                                                                   int max_len) {
  json j = a.config.empty() ? json::object() : load_json_file(a.config);
  erc::ModelConfig model = j.contains("model") ? erc::ModelConfig::from_json(j.at("model"))
                                               : erc::ModelConfig{};
  erc::TrainConfig train = j.contains("train") ? erc::TrainConfig::from_json(j.at("train"))
                                               : erc::TrainConfig{};
  model.vocab_size = vocab_size;
  model.n_classes = n_classes;
  if (model.max_positions < max_len) model.max_positions = max_len;
  if (a.seed_given) train.seed = a.seed;
  if (a.epochs >= 0) train.epochs = a.epochs;
  if (a.peak_lr > 0.0) train.peak_lr = a.peak_lr;
  return {model, train};
}

int max_seq_len(const erc::PackedDataset& ds) {
  size_t m = 1;
  for (const auto& s : ds.seqs) m = std::max(m, s.ids.size());
  return static_cast<int>(m);
}

// Vocab size from --vocab when given, else from the config file, else the
// smallest table covering every id in the packed data.
int resolve_vocab_size(const std::string& vocab_path, const std::string& config_path,
                       const erc::PackedDataset& packed) {
  if (!vocab_path.empty()) return erc::load_vocab(vocab_path).size();
  if (!config_path.empty()) {
    json j = load_json_file(config_path);
    if (j.contains("model")) {
      const int from_config = j.at("model").value("vocab_size", 0);
      if (from_config > 0) return from_config;
    }
  }
  int max_id = 0;
  for (const auto& s : packed.seqs)
    for (int id : s.ids) max_id = std::max(max_id, id);
  return max_id + 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"erc: speaker-aware emotion recognition in conversation"};
  app.require_subcommand(1);

  // ingest ------------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "normalize a corpus into native JSON lines");
  std::string in_fmt = "native_jsonl", in_path, out_path, split_hint;
  bool assign_names = false;
  uint64_t name_seed = 0;
  ingest->add_option("--format", in_fmt, "meld_csv|iemocap_json|native_jsonl");
  ingest->add_option("--in", in_path, "input file or directory")->required();
  ingest->add_option("--out", out_path, "output corpus.jsonl")->required();
  ingest->add_option("--split", split_hint, "split for single-file meld_csv input");
  ingest->add_flag("--assign-names", assign_names, "assign speaker names from the 10-name pools");
  ingest->add_option("--name-seed", name_seed, "seed for name assignment");
  ingest->callback([&] {
    erc::Corpus corpus =
        erc::load_corpus(in_path, erc::corpus_format_from_string(in_fmt), split_hint);
    if (assign_names) corpus = erc::assign_iemocap_names(corpus, name_seed);
    erc::save_native_jsonl(corpus, out_path);
    std::cout << "wrote " << corpus.dialogues.size() << " dialogues ("
              << corpus.total_utterances() << " utterances) to " << out_path << "\n";
  });

  // stats -------------------------------------------------------------------
  auto* stats_cmd = app.add_subcommand("stats", "per-split dialogue/utterance statistics");
  std::string stats_in, stats_out;
  stats_cmd->add_option("--in", stats_in, "corpus.jsonl")->required();
  stats_cmd->add_option("--out", stats_out, "also write stats JSON here");
  stats_cmd->callback([&] {
    auto stats = erc::compute_stats(erc::load_native_jsonl(stats_in));
    print_stats(stats);
    if (!stats_out.empty()) erc::write_file(stats_out, erc::stats_to_json(stats).dump(2) + "\n");
  });

  // tokenizer train -----------------------------------------------------------
  auto* tokenizer = app.add_subcommand("tokenizer", "subword tokenizer commands");
  tokenizer->require_subcommand(1);
  auto* tok_train = tokenizer->add_subcommand("train", "train a vocabulary on a corpus");
  std::string tok_in, tok_out;
  int tok_size = 4096;
  tok_train->add_option("--in", tok_in, "corpus.jsonl")->required();
  tok_train->add_option("--size", tok_size, "target vocabulary size");
  tok_train->add_option("--out", tok_out, "output vocab.json")->required();
  tok_train->callback([&] {
    erc::Vocab vocab = erc::train_vocab(erc::load_native_jsonl(tok_in), tok_size);
    erc::save_vocab(vocab, tok_out);
    std::cout << "trained vocab of size " << vocab.size() << " -> " << tok_out << "\n";
  });

  // build -------------------------------------------------------------------
  auto* build_cmd = app.add_subcommand("build", "pack utterances with context into sequences");
  std::string build_in, build_vocab, build_mode = "both", build_out;
  bool no_speaker = false, no_capitalize = false;
  int max_tokens = 512;
  build_cmd->add_option("--in", build_in, "corpus.jsonl")->required();
  build_cmd->add_option("--vocab", build_vocab, "vocab.json")->required();
  build_cmd->add_option("--mode", build_mode, "none|past|future|both");
  build_cmd->add_flag("--no-speaker", no_speaker, "do not prepend speaker names");
  build_cmd->add_flag("--no-capitalize", no_capitalize, "keep speaker names as-is");
  build_cmd->add_option("--max-tokens", max_tokens, "token budget per sequence");
  build_cmd->add_option("--out", build_out, "output packed.jsonl")->required();
  build_cmd->callback([&] {
    erc::BuildConfig cfg;
    cfg.mode = erc::context_mode_from_string(build_mode);
    cfg.prepend_speaker = !no_speaker;
    cfg.capitalize_names = !no_capitalize;
    cfg.max_total_tokens = max_tokens;
    auto packed = erc::build_packed_dataset(erc::load_native_jsonl(build_in), cfg,
                                            erc::load_vocab(build_vocab));
    erc::save_packed_jsonl(packed, build_out);
    std::cout << "packed " << packed.seqs.size() << " sequences -> " << build_out << "\n";
  });

  // train -------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a classifier on packed data");
  TrainCliArgs ta;
  train_cmd->add_option("--packed", ta.packed, "packed.jsonl file or directory")->required();
  train_cmd->add_option("--vocab", ta.vocab, "vocab.json (optional; else from config or data)");
  train_cmd->add_option("--config", ta.config, "JSON with model/train sections");
  train_cmd->add_option("--seed", ta.seed, "training seed")->each([&](const std::string&) {
    ta.seed_given = true;
  });
  train_cmd->add_option("--epochs", ta.epochs, "override epochs");
  train_cmd->add_option("--peak-lr", ta.peak_lr, "override peak learning rate");
  train_cmd->add_option("--out", ta.out, "run directory")->required();
  train_cmd->callback([&] {
    erc::PackedDataset packed = load_packed(ta.packed);
    auto [model_cfg, train_cfg] =
        resolve_train_config(ta, resolve_vocab_size(ta.vocab, ta.config, packed),
                             static_cast<int>(packed.class_names.size()), max_seq_len(packed));
    fs::path run_dir = ta.out;
    erc::RunLock lock(run_dir);
    erc::write_file(run_dir / "config.json",
                    json{{"model", model_cfg.to_json()}, {"train", train_cfg.to_json()}}.dump(2) +
                        "\n");
    erc::TrainOutput out = erc::train(model_cfg, erc::views_of(packed), train_cfg);
    erc::save_checkpoint(out.best_params, run_dir / "checkpoint.bin");
    std::string lines;
    for (const auto& e : out.result.epochs) lines += e.to_json().dump() + "\n";
    erc::write_file(run_dir / "metrics.jsonl", lines);
    erc::write_file(run_dir / "result.json", out.result.to_json().dump(2) + "\n");
    std::cout << "selected epoch " << out.result.selected_epoch << " (val weighted F1 "
              << erc::EvalReport::format_pct(out.result.selected_val_f1) << "%)";
    if (out.result.test_weighted_f1)
      std::cout << ", test weighted F1 "
                << erc::EvalReport::format_pct(*out.result.test_weighted_f1) << "%";
    std::cout << "\n";
    if (out.result.diverged) throw erc::NumericError("training diverged; last state saved");
  });

  // lr-search -----------------------------------------------------------------
  auto* lr_cmd = app.add_subcommand("lr-search", "search the peak learning rate");
  TrainCliArgs la;
  int trials = 5;
  std::string lr_out;
  lr_cmd->add_option("--packed", la.packed, "packed.jsonl file or directory")->required();
  lr_cmd->add_option("--vocab", la.vocab, "vocab.json (optional; else from config or data)");
  lr_cmd->add_option("--config", la.config, "JSON with model/train sections");
  lr_cmd->add_option("--trials", trials, "number of candidates");
  lr_cmd->add_option("--seed", la.seed, "search seed")->each([&](const std::string&) {
    la.seed_given = true;
  });
  lr_cmd->add_option("--out", lr_out, "write search result JSON here");
  lr_cmd->callback([&] {
    erc::PackedDataset packed = load_packed(la.packed);
    auto [model_cfg, train_cfg] =
        resolve_train_config(la, resolve_vocab_size(la.vocab, la.config, packed),
                             static_cast<int>(packed.class_names.size()), max_seq_len(packed));
    auto res = erc::search_peak_lr(model_cfg, erc::views_of(packed), train_cfg, trials);
    json jt = json::array();
    for (const auto& t : res.trials)
      jt.push_back({{"lr", t.lr},
                    {"val_cross_entropy",
                     std::isfinite(t.objective) ? json(t.objective) : json("diverged")}});
    json j = {{"best_lr", res.best_lr}, {"trials", jt}};
    std::cout << j.dump(2) << "\n";
    if (!lr_out.empty()) erc::write_file(lr_out, j.dump(2) + "\n");
  });

  // eval --------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on packed data");
  std::string eval_ckpt, eval_packed, eval_split = "test", eval_out;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint.bin")->required();
  eval_cmd->add_option("--packed", eval_packed, "packed.jsonl file or directory")->required();
  eval_cmd->add_option("--split", eval_split, "split to score (default test)");
  eval_cmd->add_option("--out", eval_out, "report JSON path")->required();
  eval_cmd->callback([&] {
    erc::PackedDataset packed = load_packed(eval_packed);
    erc::ModelParams params = erc::load_checkpoint(eval_ckpt);
    erc::EvalReport rep =
        erc::evaluate(params, pick_split(packed, eval_split), packed.class_names);
    erc::write_file(eval_out, rep.to_json().dump(2) + "\n");
    std::cout << "weighted F1 " << erc::EvalReport::format_pct(rep.weighted_f1) << "% on "
              << rep.n << " examples -> " << eval_out << "\n";
  });

  // ablate ------------------------------------------------------------------
  auto* ablate_cmd = app.add_subcommand("ablate", "run the context/speaker ablation grid");
  std::string ablate_spec, ablate_out, ablate_json_out;
  ablate_cmd->add_option("--spec", ablate_spec, "ablation spec JSON")->required();
  ablate_cmd->add_option("--out", ablate_out, "markdown table output")->required();
  ablate_cmd->add_option("--json-out", ablate_json_out, "also write per-seed scores JSON");
  ablate_cmd->callback([&] {
    json j = load_json_file(ablate_spec);
    erc::Corpus corpus = erc::load_native_jsonl(j.at("corpus").get<std::string>());
    erc::Vocab vocab = j.contains("vocab")
                           ? erc::load_vocab(j.at("vocab").get<std::string>())
                           : erc::train_vocab(corpus, j.value("vocab_size", 4096));
    erc::AblationSpec spec;
    std::vector<uint64_t> seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (!j.contains("cells") || j.at("cells").is_string()) {
      spec = erc::AblationSpec::standard(seeds);
    } else {
      for (const auto& c : j.at("cells"))
        spec.cells.push_back({erc::context_mode_from_string(c.at("mode").get<std::string>()),
                              c.value("prepend_speaker", true)});
      spec.seeds = seeds;
    }
    erc::BuildConfig build =
        j.contains("build") ? erc::BuildConfig::from_json(j.at("build")) : erc::BuildConfig{};
    erc::ModelConfig model =
        j.contains("model") ? erc::ModelConfig::from_json(j.at("model")) : erc::ModelConfig{};
    erc::TrainConfig train =
        j.contains("train") ? erc::TrainConfig::from_json(j.at("train")) : erc::TrainConfig{};
    model.vocab_size = vocab.size();
    model.n_classes = corpus.n_classes();
    if (model.max_positions < build.max_total_tokens) model.max_positions = build.max_total_tokens;
    auto rows = erc::run_ablation(spec, corpus, vocab, model, train, build);
    std::string md = erc::ablation_markdown(rows);
    erc::write_file(ablate_out, md);
    if (!ablate_json_out.empty())
      erc::write_file(ablate_json_out, erc::ablation_json(rows).dump(2) + "\n");
    std::cout << md;
  });

  // inspect -----------------------------------------------------------------
  auto* inspect_cmd = app.add_subcommand("inspect", "attention reports for sampled test cases");
  std::string ins_ckpt, ins_packed, ins_vocab, ins_split = "test", ins_out;
  int n_correct = 10, n_incorrect = 10;
  uint64_t ins_seed = 0;
  inspect_cmd->add_option("--checkpoint", ins_ckpt, "checkpoint.bin")->required();
  inspect_cmd->add_option("--packed", ins_packed, "packed.jsonl file or directory")->required();
  inspect_cmd->add_option("--vocab", ins_vocab, "vocab.json")->required();
  inspect_cmd->add_option("--split", ins_split, "split to sample from (default test)");
  inspect_cmd->add_option("--n-correct", n_correct, "correctly classified samples");
  inspect_cmd->add_option("--n-incorrect", n_incorrect, "incorrectly classified samples");
  inspect_cmd->add_option("--seed", ins_seed, "sampling seed");
  inspect_cmd->add_option("--out", ins_out, "output directory")->required();
  inspect_cmd->callback([&] {
    erc::PackedDataset packed = load_packed(ins_packed);
    erc::Vocab vocab = erc::load_vocab(ins_vocab);
    erc::ModelParams params = erc::load_checkpoint(ins_ckpt);
    auto seqs = pick_split(packed, ins_split);
    std::vector<int> preds = erc::predict_classes(params, seqs);
    std::vector<bool> correct(seqs.size());
    for (size_t i = 0; i < seqs.size(); ++i) correct[i] = preds[i] == seqs[i]->label.class_index;
    auto picks = erc::sample_for_analysis(correct, n_correct, n_incorrect, ins_seed);

    fs::path out_dir = ins_out;
    std::vector<erc::HighlightReport> reports;
    json samples = json::array();
    for (size_t k = 0; k < picks.size(); ++k) {
      const erc::PackedSequence& ps = *seqs[picks[k]];
      erc::AttentionTensor attn;
      erc::Prediction pred = erc::forward(params, ps.ids, &attn);
      erc::HighlightReport rep =
          erc::make_highlight_report(ps, vocab, attn, pred, packed.class_names);
      std::string file = "sample_" + std::to_string(k) + "_" + ps.dialogue_id + "_t" +
                         std::to_string(ps.index) + ".html";
      erc::write_file(out_dir / file, erc::render_report(rep));
      samples.push_back({{"file", file},
                         {"dialogue_id", ps.dialogue_id},
                         {"index", ps.index},
                         {"predicted", rep.predicted_name},
                         {"gold", ps.label.class_name},
                         {"correct", rep.correct},
                         {"cls_attends_current_speaker", rep.cls_attends_current_speaker}});
      reports.push_back(std::move(rep));
    }
    json summary = {{"samples", samples},
                    {"speaker_attention", erc::speaker_attention_stat(reports).to_json()}};
    erc::write_file(out_dir / "summary.json", summary.dump(2) + "\n");
    std::cout << "wrote " << picks.size() << " reports under " << ins_out << "\n";
  });

  // pipeline ----------------------------------------------------------------
  auto* pipe_cmd = app.add_subcommand("pipeline", "run the full experiment chain");
  std::string pipe_config, pipe_out;
  pipe_cmd->add_option("--config", pipe_config, "experiment config JSON")->required();
  pipe_cmd->add_option("--out", pipe_out, "run directory")->required();
  pipe_cmd->callback([&] {
    erc::ExperimentConfig cfg = erc::ExperimentConfig::from_json(load_json_file(pipe_config));
    erc::run_pipeline(cfg, pipe_out);
    std::cout << "pipeline complete: " << pipe_out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit cleanly, bad flags are config errors
  } catch (const erc::ConfigError& e) {
    std::cerr << "erc: config error: " << e.what() << "\n";
    return 2;
  } catch (const erc::DataError& e) {
    std::cerr << "erc: data error: " << e.what() << "\n";
    return 3;
  } catch (const erc::NumericError& e) {
    std::cerr << "erc: numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "erc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
