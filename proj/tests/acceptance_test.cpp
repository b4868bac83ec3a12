// Acceptance suite: each test is one numbered criterion and prints a
// [PASS]/[FAIL] line. Direction criteria run the full desk-scale training
// stack on bundled synthetic tasks; nothing here depends on external data
// except the optional real-corpus check, which skips when ERC_MELD_DIR is
// unset.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "erc/ablation.hpp"
#include "erc/attnreport.hpp"
#include "erc/corpus.hpp"
#include "erc/evaluation.hpp"
#include "erc/model.hpp"
#include "erc/pipeline.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"
#include "erc/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace erc;

namespace {

class Criterion : public ::testing::Test {
 protected:
  void declare(int number, std::string what) {
    number_ = number;
    what_ = std::move(what);
  }
  void TearDown() override {
    std::printf("[%s] criterion %2d: %s\n", HasFailure() ? "FAIL" : (skipped_ ? "SKIP" : "PASS"),
                number_, what_.c_str());
    std::fflush(stdout);
  }
  void mark_skipped() { skipped_ = true; }

 private:
  int number_ = 0;
  std::string what_;
  bool skipped_ = false;
};

ModelConfig desk_model(int vocab_size, int n_classes, int max_positions = 128) {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.d_model = 32;
  mc.n_heads = 2;
  mc.n_layers = 2;
  mc.d_ff = 64;
  mc.max_positions = max_positions;
  mc.n_classes = n_classes;
  mc.dropout = 0.0;
  return mc;
}

TrainConfig desk_train(int epochs = 5) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.peak_lr = 2e-3;
  tc.batch_size = 16;
  tc.lambda = 0.01;
  return tc;
}

std::vector<uint64_t> five_seeds() { return {1, 2, 3, 4, 5}; }

}  // namespace

// ---------------------------------------------------------------------------
TEST_F(Criterion, C01_PackingInvariantSuite) {
  declare(1, "packing invariants over randomized dialogues x modes x speaker toggles");
  const auto t0 = std::chrono::steady_clock::now();

  Corpus corpus = erc_test::random_corpus(1000, 1, 10, 1, 9, 20240101, 6, 4);
  Vocab vocab = train_vocab(corpus, 600);
  long checked = 0;
  for (const auto& d : corpus.dialogues) {
    for (ContextMode mode : {ContextMode::none, ContextMode::past_only, ContextMode::future_only,
                             ContextMode::both}) {
      for (bool prepend : {true, false}) {
        BuildConfig cfg;
        cfg.mode = mode;
        cfg.prepend_speaker = prepend;
        cfg.max_total_tokens = 128;  // tight budget exercises overflow
        for (int t = 1; t <= static_cast<int>(d.utterances.size()); ++t) {
          PackedSequence ps = build(d, t, cfg, vocab);
          erc_test::check_packed_invariants(ps, d, t, cfg, vocab);
          ++checked;
          if (HasFatalFailure()) return;
        }
      }
    }
  }
  EXPECT_GE(checked, 8000);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0) << "invariant suite must finish within a minute";
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C02_OverflowOracle) {
  declare(2, "independent packing simulation agrees on over-budget dialogues");
  Rng rng(777);
  int overflowed = 0;
  for (int k = 0; k < 200; ++k) {
    Dialogue d;
    d.id = "of" + std::to_string(k);
    d.split = "train";
    const int m = rand_int(rng, 6, 12);
    for (int t = 1; t <= m; ++t) {
      Utterance u;
      u.dialogue_id = d.id;
      u.index = t;
      u.speaker.id = "s" + std::to_string(t % 3);
      u.speaker.display_name = synthetic_name_pool()[static_cast<size_t>(t % 3)];
      const int words = rand_int(rng, 25, 70);  // long turns force overflow
      for (int w = 0; w < words; ++w) {
        if (!u.text.empty()) u.text += ' ';
        u.text += "blk" + std::to_string(rand_int(rng, 0, 400));
      }
      u.label = {0, "class0"};
      d.utterances.push_back(std::move(u));
    }
    Vocab vocab;  // pure byte vocab keeps turns long
    BuildConfig cfg;
    for (int t = 1; t <= m; ++t) {
      PackedSequence ps = build(d, t, cfg, vocab);
      auto sim = erc_test::simulate_context_packing(d, t, cfg, vocab);
      ASSERT_EQ(ps.included_past, sim.past) << d.id << " t=" << t;
      ASSERT_EQ(ps.included_future, sim.future) << d.id << " t=" << t;
      if (static_cast<int>(ps.included_past.size() + ps.included_future.size()) + 1 < m)
        ++overflowed;
      ASSERT_LE(ps.ids.size(), 512u);
    }
  }
  EXPECT_GT(overflowed, 200) << "dialogues were engineered to exceed the budget";
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C03_WeightedF1Oracle) {
  declare(3, "weighted F1 matches brute-force TP/FP/FN counting to 1e-9");
  Rng rng(31337);
  for (int trial = 0; trial < 1000; ++trial) {
    const int classes = rand_int(rng, 2, 10);
    const int n = rand_int(rng, 1, 80);
    std::vector<int> gold(static_cast<size_t>(n)), pred(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      gold[static_cast<size_t>(i)] = rand_int(rng, 0, classes - 1);
      pred[static_cast<size_t>(i)] = rand_int(rng, 0, classes - 1);
    }
    ASSERT_NEAR(weighted_f1(pred, gold, classes),
                erc_test::brute_force_weighted_f1(pred, gold, classes), 1e-9);
  }
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C04_GradientCheck) {
  declare(4, "analytic gradients match central finite differences (< 1e-4)");
  ModelConfig mc;
  mc.vocab_size = 11;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 2;
  mc.d_ff = 16;
  mc.max_positions = 12;
  mc.n_classes = 3;
  mc.dropout = 0.0;
  ModelParams params = init_model(mc, 3);
  ASSERT_LE(params.n_params(), 5000u);

  std::vector<std::vector<int>> seqs = {{2, 5, 7, 9, 3}, {2, 10, 4, 3}, {2, 6, 6, 6, 6, 6, 6, 3}};
  std::vector<int> labels = {0, 2, 1};
  const double h = 1e-5;

  for (L2Mode mode : {L2Mode::in_loss, L2Mode::decoupled}) {
    for (double lambda : {0.0, 0.01}) {
      loss_and_grad(params, seqs, labels, lambda, mode);
      std::vector<double> analytic;
      params.visit([&](Param& p) {
        for (long c = 0; c < p.value.cols(); ++c)
          for (long r = 0; r < p.value.rows(); ++r) analytic.push_back(p.grad(r, c));
      });
      double max_rel = 0.0;
      size_t flat = 0;
      params.visit([&](Param& p) {
        for (long c = 0; c < p.value.cols(); ++c)
          for (long r = 0; r < p.value.rows(); ++r) {
            const double orig = p.value(r, c);
            p.value(r, c) = orig + h;
            const double lp = loss_and_grad(params, seqs, labels, lambda, mode).total;
            p.value(r, c) = orig - h;
            const double lm = loss_and_grad(params, seqs, labels, lambda, mode).total;
            p.value(r, c) = orig;
            const double fd = (lp - lm) / (2 * h);
            const double a = analytic[flat++];
            max_rel = std::max(max_rel,
                               std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-6));
          }
      });
      EXPECT_LT(max_rel, 1e-4) << "mode=" << to_string(mode) << " lambda=" << lambda;
    }
  }
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C05_NormalizationEverywhere) {
  declare(5, "softmax outputs and attention rows are distributions (1e-6)");
  Rng rng(99);
  for (int pass = 0; pass < 100; ++pass) {
    ModelConfig mc;
    mc.vocab_size = 40;
    mc.d_model = 16;
    mc.n_heads = pass % 2 ? 2 : 4;
    mc.n_layers = 1 + pass % 3;
    mc.d_ff = 32;
    mc.max_positions = 32;
    mc.n_classes = 2 + pass % 4;
    mc.dropout = 0.0;
    ModelParams params = init_model(mc, static_cast<uint64_t>(pass));
    std::vector<int> ids;
    const int len = rand_int(rng, 1, 30);
    for (int i = 0; i < len; ++i) ids.push_back(rand_int(rng, 0, 39));
    AttentionTensor attn;
    Prediction pred = forward(params, ids, &attn);
    ASSERT_NEAR(pred.probs.sum(), 1.0, 1e-6);
    ASSERT_GE(pred.probs.minCoeff(), 0.0);
    for (int l = 0; l < attn.n_layers; ++l)
      for (int hd = 0; hd < attn.n_heads; ++hd) {
        const MatrixXd& m = attn.at(l, hd);
        for (long r = 0; r < m.rows(); ++r) {
          ASSERT_NEAR(m.row(r).sum(), 1.0, 1e-6);
          ASSERT_GE(m.row(r).minCoeff(), 0.0);
        }
      }
  }
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C06_Scheduler) {
  declare(6, "warmup/decay schedule: endpoints zero, peak at ceil(0.2T), linear");
  for (long total : {10L, 137L, 1000L, 12345L}) {
    const double peak = 3e-4;
    EXPECT_EQ(lr_at(0, total, peak), 0.0);
    EXPECT_EQ(lr_at(total, total, peak), 0.0);
    const long warmup = static_cast<long>(std::ceil(0.2 * static_cast<double>(total)));
    EXPECT_DOUBLE_EQ(lr_at(warmup, total, peak), peak);
    // 20 sampled steps against exact interpolation.
    for (int k = 0; k < 20; ++k) {
      const long step = (total * (k + 1)) / 21;
      const double expect =
          step <= warmup
              ? peak * static_cast<double>(step) / static_cast<double>(warmup)
              : peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
      ASSERT_DOUBLE_EQ(lr_at(step, total, peak), expect) << "T=" << total << " step=" << step;
    }
  }
  EXPECT_THROW(lr_at(0, 0, 1e-4), ConfigError);
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C07_TrainingSanity) {
  declare(7, "content task: train loss strictly decreases, mean test F1 >= 0.90 (5 seeds)");
  const auto t0 = std::chrono::steady_clock::now();

  SyntheticConfig sc;  // ~200 dialogues, filler vocabulary ~100, 3 classes
  sc.rule = LabelRule::content_only;
  sc.vocabulary_size = 100;
  sc.n_classes = 3;
  sc.min_utterances = 3;
  sc.max_utterances = 5;
  sc.min_words = 3;
  sc.max_words = 6;
  sc.train_dialogues = 160;
  sc.val_dialogues = 20;
  sc.test_dialogues = 20;
  Corpus corpus = generate_synthetic(sc, 2027);
  Vocab vocab = train_vocab(corpus, 512);
  BuildConfig build;
  build.mode = ContextMode::none;
  PackedDataset packed = build_packed_dataset(corpus, build, vocab);
  PackedViews views = views_of(packed);

  const int epochs = 5;
  std::vector<double> mean_epoch_loss(epochs, 0.0);
  double mean_test = 0.0;
  for (uint64_t seed : five_seeds()) {
    TrainConfig tc = desk_train(epochs);
    tc.seed = seed;
    TrainOutput out = train(desk_model(vocab.size(), 3), views, tc);
    ASSERT_FALSE(out.result.diverged);
    ASSERT_EQ(out.result.epochs.size(), static_cast<size_t>(epochs));
    for (int e = 0; e < epochs; ++e)
      mean_epoch_loss[static_cast<size_t>(e)] += *out.result.epochs[static_cast<size_t>(e)].train_loss;
    mean_test += *out.result.test_weighted_f1;
  }
  mean_test /= 5.0;
  for (auto& v : mean_epoch_loss) v /= 5.0;

  for (int e = 1; e < epochs; ++e)
    EXPECT_LT(mean_epoch_loss[static_cast<size_t>(e)], mean_epoch_loss[static_cast<size_t>(e - 1)])
        << "mean train loss must strictly decrease (epoch " << e + 1 << ")";
  EXPECT_GE(mean_test, 0.90);

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 300.0);
  std::printf("    (content task: mean test weighted F1 %.4f, %.0fs)\n", mean_test, secs);
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C08_SpeakerAwarenessDirection) {
  declare(8, "speaker task: prepending speaker names beats no-speaker by >= 10 points");
  SyntheticConfig sc;
  sc.rule = LabelRule::speaker_dependent;
  sc.vocabulary_size = 40;
  sc.n_speakers = 3;
  sc.n_classes = 3;
  sc.min_utterances = 2;
  sc.max_utterances = 3;
  sc.min_words = 2;
  sc.max_words = 4;
  sc.train_dialogues = 300;
  sc.val_dialogues = 25;
  sc.test_dialogues = 50;
  Corpus corpus = generate_synthetic(sc, 4242);
  Vocab vocab = train_vocab(corpus, 512);

  AblationSpec spec;
  spec.cells = {{ContextMode::none, true}, {ContextMode::none, false}};
  spec.seeds = five_seeds();
  BuildConfig base;
  base.mode = ContextMode::none;
  // Composing the cue with the speaker identity needs a longer schedule than
  // the plain cue-copy tasks.
  TrainConfig tc = desk_train(15);
  tc.peak_lr = 3e-3;
  auto rows = run_ablation(spec, corpus, vocab, desk_model(vocab.size(), 3), tc, base);
  ASSERT_EQ(rows.size(), 2u);
  const double with_names = rows[0].mean_f1;
  const double without_names = rows[1].mean_f1;
  std::printf("    (speaker task: with names %.4f, without %.4f)\n", with_names, without_names);
  EXPECT_GE(with_names, without_names + 0.10);
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C09_ContextDirection) {
  declare(9, "context task: both >= none + 10 points; past/future at or above none");
  SyntheticConfig sc;
  sc.rule = LabelRule::context_dependent;
  sc.vocabulary_size = 40;
  sc.n_speakers = 3;
  sc.n_classes = 3;
  sc.min_utterances = 2;
  sc.max_utterances = 2;
  sc.min_words = 2;
  sc.max_words = 4;
  sc.train_dialogues = 220;
  sc.val_dialogues = 25;
  sc.test_dialogues = 50;
  Corpus corpus = generate_synthetic(sc, 5150);
  Vocab vocab = train_vocab(corpus, 512);

  AblationSpec spec;
  spec.cells = {{ContextMode::both, true},
                {ContextMode::none, true},
                {ContextMode::past_only, true},
                {ContextMode::future_only, true}};
  spec.seeds = five_seeds();
  BuildConfig base;
  auto rows =
      run_ablation(spec, corpus, vocab, desk_model(vocab.size(), 3), desk_train(), base);
  const double both = rows[0].mean_f1;
  const double none = rows[1].mean_f1;
  const double past = rows[2].mean_f1;
  const double future = rows[3].mean_f1;
  std::printf("    (context task: both %.4f, none %.4f, past %.4f, future %.4f)\n", both, none,
              past, future);
  EXPECT_GE(both, none + 0.10);
  EXPECT_GE(past, none);
  EXPECT_GE(future, none);
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C10_ModelSelectionRestoresPeak) {
  declare(10, "best-validation checkpoint reproduces its peak F1 exactly after reload");
  erc_test::TempDir tmp("select");
  SyntheticConfig sc;
  sc.rule = LabelRule::content_only;
  sc.vocabulary_size = 60;
  sc.n_classes = 3;
  sc.min_utterances = 2;
  sc.max_utterances = 3;
  sc.min_words = 1;
  sc.max_words = 3;
  sc.train_dialogues = 14;  // tiny and noisy so validation F1 wobbles
  sc.val_dialogues = 5;
  sc.test_dialogues = 5;
  Corpus corpus = generate_synthetic(sc, 8);
  Vocab vocab = train_vocab(corpus, 400);
  BuildConfig build;
  build.mode = ContextMode::none;
  PackedDataset packed = build_packed_dataset(corpus, build, vocab);
  PackedViews views = views_of(packed);

  ModelConfig mc = desk_model(vocab.size(), 3);
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.d_ff = 32;

  bool found_non_final_peak = false;
  for (uint64_t seed = 1; seed <= 12 && !found_non_final_peak; ++seed) {
    TrainConfig tc = desk_train(5);
    tc.peak_lr = 4e-3;
    tc.seed = seed;
    TrainOutput out = train(mc, views, tc);
    if (out.result.diverged) continue;
    if (out.result.selected_epoch >= 5) continue;  // peak must be non-final
    found_non_final_peak = true;

    save_checkpoint(out.best_params, tmp / "best.bin");
    ModelParams loaded = load_checkpoint(tmp / "best.bin");
    std::vector<int> gold;
    for (const auto* s : views.val) gold.push_back(s->label.class_index);
    const double replayed = weighted_f1(predict_classes(loaded, views.val), gold, 3);
    EXPECT_EQ(replayed, out.result.selected_val_f1)
        << "reloaded checkpoint must reproduce the recorded peak exactly";
    double best = 0.0;
    for (const auto& e : out.result.epochs) best = std::max(best, e.val_weighted_f1);
    EXPECT_EQ(out.result.selected_val_f1, best);
  }
  EXPECT_TRUE(found_non_final_peak)
      << "seed sweep found no run whose validation F1 peaks before the final epoch";
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C11_AttentionAnalysisOracles) {
  declare(11, "top-k vs full sort, head mean, name expansion, 0.6 speaker-stat fixture");
  Rng rng(606);

  // top_attended vs brute-force sort on 1000 random rows.
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = rand_int(rng, 2, 32);
    MatrixXd m(t, t);
    for (int r = 0; r < t; ++r) {
      double sum = 0.0;
      for (int c = 0; c < t; ++c) {
        m(r, c) = rand_uniform(rng, 0.0, 1.0) + 1e-9;
        sum += m(r, c);
      }
      m.row(r) /= sum;
    }
    const int q = rand_int(rng, 0, t - 1);
    const int k = std::min(t, 10);
    auto got = top_attended(m, {q}, k);
    std::vector<std::pair<double, int>> pairs;
    for (int i = 0; i < t; ++i) pairs.emplace_back(-m(q, i), i);
    std::sort(pairs.begin(), pairs.end());
    ASSERT_EQ(static_cast<int>(got.size()), k);
    for (int i = 0; i < k; ++i) ASSERT_EQ(got[static_cast<size_t>(i)], pairs[static_cast<size_t>(i)].second);
  }

  // head_mean vs direct averaging.
  AttentionTensor attn;
  attn.n_layers = 2;
  attn.n_heads = 3;
  attn.seq_len = 6;
  for (int i = 0; i < 6; ++i) {
    MatrixXd m(6, 6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) m(r, c) = rand_uniform(rng, 0.0, 1.0);
      m.row(r) /= m.row(r).sum();
    }
    attn.maps.push_back(m);
  }
  for (int l = 0; l < 2; ++l) {
    MatrixXd direct = MatrixXd::Zero(6, 6);
    for (int h = 0; h < 3; ++h) direct += attn.maps[static_cast<size_t>(l * 3 + h)];
    direct /= 3.0;
    ASSERT_TRUE(head_mean(attn, l) == direct);
  }

  // Name expansion fixture: a hit on a name subword lights the whole name.
  std::vector<TokenSpan> spans = {{0, 1, SpanKind::cls},
                                  {1, 4, SpanKind::speaker_name},
                                  {4, 8, SpanKind::utterance_text}};
  std::set<int> grown = expand_to_name_spans({2, 5}, spans);
  EXPECT_EQ(grown, (std::set<int>{1, 2, 3, 5}));
  EXPECT_EQ(expand_to_name_spans({5}, spans), (std::set<int>{5}));

  // The 10-report fixture with 6 positives: fraction 0.6.
  std::vector<HighlightReport> reports(10);
  for (size_t i = 0; i < 10; ++i) {
    reports[i].correct = false;
    reports[i].cls_attends_current_speaker = i < 6;
  }
  SpeakerAttentionStat st = speaker_attention_stat(reports);
  ASSERT_TRUE(st.incorrect_fraction.has_value());
  EXPECT_DOUBLE_EQ(*st.incorrect_fraction, 0.6);
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C12_RealMeldStatistics) {
  declare(12, "real MELD (if ERC_MELD_DIR set): exact counts, mean/std within 0.1");
  const char* dir = std::getenv("ERC_MELD_DIR");
  if (!dir || !*dir) {
    mark_skipped();
    GTEST_SKIP() << "set ERC_MELD_DIR to a directory of MELD train/dev/test csv files";
  }
  Corpus corpus = load_corpus(dir, CorpusFormat::meld_csv);
  CorpusStats stats = compute_stats(corpus);

  const struct {
    const char* split;
    long dialogues, utterances;
    double mean, stddev;
  } expected[] = {{"train", 1038, 9989, 9.6, 5.8},
                  {"val", 114, 1109, 9.7, 5.4},
                  {"test", 280, 2610, 9.3, 5.7}};
  for (const auto& e : expected) {
    const SplitStats& st = stats.by_split.at(e.split);
    EXPECT_EQ(st.dialogues, e.dialogues) << e.split;
    EXPECT_EQ(st.utterances, e.utterances) << e.split;
    EXPECT_NEAR(st.mean_utterances, e.mean, 0.1) << e.split;
    EXPECT_NEAR(st.std_utterances, e.stddev, 0.1) << e.split;
  }
}

// ---------------------------------------------------------------------------
TEST_F(Criterion, C13_PipelineDeterminism) {
  declare(13, "full pipeline run twice with one seed yields identical metrics files");
  erc_test::TempDir tmp("accept13");
  ExperimentConfig cfg;
  cfg.seed = 99;
  SyntheticConfig sc;
  sc.rule = LabelRule::content_only;
  sc.vocabulary_size = 30;
  sc.n_classes = 3;
  sc.min_utterances = 2;
  sc.max_utterances = 3;
  sc.min_words = 2;
  sc.max_words = 4;
  sc.train_dialogues = 50;
  sc.val_dialogues = 10;
  sc.test_dialogues = 10;
  cfg.synthetic = sc;
  cfg.vocab_size = 320;
  cfg.build.mode = ContextMode::both;
  cfg.model = desk_model(0, 0);  // vocab/classes auto-filled by the pipeline
  cfg.train = desk_train(3);
  cfg.inspect_n_correct = 3;
  cfg.inspect_n_incorrect = 3;

  run_pipeline(cfg, tmp / "a");
  run_pipeline(cfg, tmp / "b");
  for (const char* f : {"corpus.jsonl", "vocab.json", "packed.jsonl", "train/metrics.jsonl",
                        "train/result.json", "eval/report.json", "inspect/summary.json"})
    EXPECT_EQ(read_file(tmp / "a" / f), read_file(tmp / "b" / f)) << f;
}
