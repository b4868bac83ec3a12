// Independent test-side oracles. These reimplement the checked behavior from
// scratch (counting, simulation, brute-force sorting) and must not share code
// with the implementation paths they verify.
#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "erc/corpus.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"

namespace erc_test {

// --------------------------------------------------------------------------
// Brute-force weighted F1 by direct TP/FP/FN counting per class.
inline double brute_force_weighted_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                                      int n_classes) {
  const double n = static_cast<double>(gold.size());
  double total = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    long tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == c) ++support;
      if (pred[i] == c && gold[i] == c) ++tp;
      if (pred[i] == c && gold[i] != c) ++fp;
      if (pred[i] != c && gold[i] == c) ++fn;
    }
    double f1 = 0.0;
    if (tp > 0) {
      const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
      const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
      f1 = 2.0 * p * r / (p + r);
    }
    total += f1 * static_cast<double>(support) / n;
  }
  return total;
}

// --------------------------------------------------------------------------
// Independent simulation of the context-packing loop. Renders and tokenizes
// each utterance on its own (leading space, "NAME: text", uppercase names),
// then replays the outward-growth/overflow-removal iteration over counts.
struct SimulatedPack {
  std::vector<int> past;    // included utterance indices, chronological
  std::vector<int> future;
};

inline int oracle_token_count(const erc::Utterance& u, const erc::BuildConfig& cfg,
                              const erc::Vocab& vocab) {
  std::string rendered;
  if (cfg.prepend_speaker) {
    std::string name = u.speaker.display_name;
    if (cfg.capitalize_names)
      for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    rendered = " " + name + ": " + u.text;
  } else {
    rendered = " " + u.text;
  }
  return static_cast<int>(erc::encode(rendered, vocab).size());
}

inline SimulatedPack simulate_context_packing(const erc::Dialogue& d, int t,
                                              const erc::BuildConfig& cfg,
                                              const erc::Vocab& vocab) {
  const int m = static_cast<int>(d.utterances.size());
  std::vector<int> counts(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i)
    counts[static_cast<size_t>(i)] = oracle_token_count(d.utterances[static_cast<size_t>(i)], cfg, vocab);

  const int budget = cfg.max_total_tokens - 2;
  int current = counts[static_cast<size_t>(t - 1)];
  if (current > budget - 4) current = budget - 4;  // oversized current is truncated

  const bool want_past =
      cfg.mode == erc::ContextMode::past_only || cfg.mode == erc::ContextMode::both;
  const bool want_future =
      cfg.mode == erc::ContextMode::future_only || cfg.mode == erc::ContextMode::both;

  SimulatedPack sim;
  long len = 4 + current;
  for (int i = 1;; ++i) {
    const bool can_past = want_past && t - i >= 1;
    const bool can_future = want_future && t + i <= m;
    if (!can_past && !can_future) break;
    if (len > budget) break;
    long added = 0;
    if (can_past) added += counts[static_cast<size_t>(t - i - 1)];
    if (can_future) added += counts[static_cast<size_t>(t + i - 1)];
    if (len + added > budget) break;  // iteration dropped whole
    len += added;
    if (can_past) sim.past.push_back(t - i);
    if (can_future) sim.future.push_back(t + i);
  }
  std::sort(sim.past.begin(), sim.past.end());
  return sim;
}

// --------------------------------------------------------------------------
// Full invariant check for one packed sequence against its source dialogue.
inline void check_packed_invariants(const erc::PackedSequence& ps, const erc::Dialogue& d, int t,
                                    const erc::BuildConfig& cfg, const erc::Vocab& vocab) {
  const int m = static_cast<int>(d.utterances.size());
  SCOPED_TRACE("dialogue " + d.id + " t=" + std::to_string(t) + " mode=" +
               erc::to_string(cfg.mode) + (cfg.prepend_speaker ? "" : " no-speaker"));

  // Budget and frame structure.
  ASSERT_LE(static_cast<int>(ps.ids.size()), cfg.max_total_tokens);
  ASSERT_EQ(ps.ids.front(), erc::Vocab::cls_id);
  ASSERT_EQ(ps.ids.back(), erc::Vocab::eos_id);
  const int sep0 = ps.segment_boundaries[0];
  const int sep1 = ps.segment_boundaries[1];
  ASSERT_LT(sep0, sep1);
  for (int p : {sep0, sep0 + 1, sep1, sep1 + 1}) {
    ASSERT_GE(p, 1);
    ASSERT_LT(p, static_cast<int>(ps.ids.size()) - 1);
    ASSERT_EQ(ps.ids[static_cast<size_t>(p)], erc::Vocab::eos_id);
  }

  // Spans: non-overlapping, covering, in order.
  int cursor = 0;
  for (const auto& span : ps.spans) {
    ASSERT_EQ(span.start, cursor);
    ASSERT_LT(span.start, span.end);
    cursor = span.end;
  }
  ASSERT_EQ(cursor, static_cast<int>(ps.ids.size()));

  // Current utterance tokens sit contiguously and completely between the
  // separators; recompute them independently.
  const erc::Utterance& cur = d.utterances[static_cast<size_t>(t - 1)];
  std::string rendered;
  if (cfg.prepend_speaker) {
    std::string name = cur.speaker.display_name;
    if (cfg.capitalize_names)
      for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    rendered = " " + name + ": " + cur.text;
  } else {
    rendered = " " + cur.text;
  }
  std::vector<int> expect_cur = erc::encode(rendered, vocab);
  if (static_cast<int>(expect_cur.size()) > cfg.max_total_tokens - 6)
    expect_cur.resize(static_cast<size_t>(cfg.max_total_tokens - 6));
  ASSERT_EQ(ps.current_span.start, sep0 + 2);
  ASSERT_EQ(ps.current_span.end, sep1);
  std::vector<int> got_cur(ps.ids.begin() + ps.current_span.start,
                           ps.ids.begin() + ps.current_span.end);
  ASSERT_EQ(got_cur, expect_cur);

  // Chronology and direction of context.
  ASSERT_TRUE(std::is_sorted(ps.included_past.begin(), ps.included_past.end()));
  ASSERT_TRUE(std::is_sorted(ps.included_future.begin(), ps.included_future.end()));
  for (int idx : ps.included_past) {
    ASSERT_GE(idx, 1);
    ASSERT_LT(idx, t);
  }
  for (int idx : ps.included_future) {
    ASSERT_GT(idx, t);
    ASSERT_LE(idx, m);
  }

  // Mode correctness.
  switch (cfg.mode) {
    case erc::ContextMode::none:
      ASSERT_TRUE(ps.included_past.empty());
      ASSERT_TRUE(ps.included_future.empty());
      break;
    case erc::ContextMode::past_only:
      ASSERT_TRUE(ps.included_future.empty());
      break;
    case erc::ContextMode::future_only:
      ASSERT_TRUE(ps.included_past.empty());
      break;
    case erc::ContextMode::both:
      // Symmetric growth: iteration i adds both sides when both exist.
      for (int idx : ps.included_future) {
        const int i = idx - t;
        if (t - i >= 1) {
          ASSERT_TRUE(std::count(ps.included_past.begin(), ps.included_past.end(), t - i))
              << "future x_{t+" << i << "} included but past x_{t-" << i << "} missing";
        }
      }
      for (int idx : ps.included_past) {
        const int i = t - idx;
        if (t + i <= m) {
          ASSERT_TRUE(std::count(ps.included_future.begin(), ps.included_future.end(), t + i))
              << "past x_{t-" << i << "} included but future x_{t+" << i << "} missing";
        }
      }
      break;
  }

  // Segment content: past tokens before sep0, future tokens after sep1+2.
  {
    std::vector<int> expect_past, expect_future;
    for (int idx : ps.included_past) {
      auto ids = erc::encode(
          [&] {
            const auto& u = d.utterances[static_cast<size_t>(idx - 1)];
            std::string r;
            if (cfg.prepend_speaker) {
              std::string name = u.speaker.display_name;
              if (cfg.capitalize_names)
                for (auto& ch : name)
                  ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
              r = " " + name + ": " + u.text;
            } else {
              r = " " + u.text;
            }
            return r;
          }(),
          vocab);
      expect_past.insert(expect_past.end(), ids.begin(), ids.end());
    }
    for (int idx : ps.included_future) {
      const auto& u = d.utterances[static_cast<size_t>(idx - 1)];
      std::string r;
      if (cfg.prepend_speaker) {
        std::string name = u.speaker.display_name;
        if (cfg.capitalize_names)
          for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        r = " " + name + ": " + u.text;
      } else {
        r = " " + u.text;
      }
      auto ids = erc::encode(r, vocab);
      expect_future.insert(expect_future.end(), ids.begin(), ids.end());
    }
    std::vector<int> got_past(ps.ids.begin() + 1, ps.ids.begin() + sep0);
    std::vector<int> got_future(ps.ids.begin() + sep1 + 2, ps.ids.end() - 1);
    ASSERT_EQ(got_past, expect_past);
    ASSERT_EQ(got_future, expect_future);
  }

  // Speaker toggle: no speaker spans without prepending; with prepending,
  // every packed utterance contributes one.
  long name_spans = 0;
  for (const auto& span : ps.spans)
    if (span.kind == erc::SpanKind::speaker_name) ++name_spans;
  if (!cfg.prepend_speaker) {
    ASSERT_EQ(name_spans, 0);
  } else {
    ASSERT_EQ(name_spans,
              1 + static_cast<long>(ps.included_past.size() + ps.included_future.size()));
  }

  // Label passthrough.
  ASSERT_EQ(ps.label.class_index, cur.label.class_index);
  ASSERT_EQ(ps.index, t);
  ASSERT_EQ(ps.dialogue_id, d.id);
}

}  // namespace erc_test
