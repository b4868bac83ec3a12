// Packs an utterance with speaker-prefixed past/future context into one
// token-budgeted sequence:
//
//   [CLS] past... </s></s> current </s></s> future... [EOS]
//
// Context grows outward from the current utterance, one step per iteration
// (x_{t-i} prepended, x_{t+i} appended). An iteration that would push the
// sequence past the budget is dropped whole, both sides. When one direction
// runs out (or the mode is one-sided) the loop keeps filling from the other.
//
// Every utterance is rendered " NAME: text" (name uppercased by default) and
// tokenized on its own, so its token count does not depend on its neighbors.
#pragma once

#include <deque>
#include <iostream>
#include <string>
#include <vector>

#include "erc/corpus.hpp"
#include "erc/tokenizer.hpp"
#include "erc/util.hpp"

namespace erc {

enum class ContextMode { none, past_only, future_only, both };

inline std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::none: return "none";
    case ContextMode::past_only: return "past";
    case ContextMode::future_only: return "future";
    case ContextMode::both: return "both";
  }
  return "?";
}

inline ContextMode context_mode_from_string(const std::string& s) {
  if (s == "none") return ContextMode::none;
  if (s == "past" || s == "past_only") return ContextMode::past_only;
  if (s == "future" || s == "future_only") return ContextMode::future_only;
  if (s == "both") return ContextMode::both;
  throw ConfigError("unknown context mode \"" + s + "\" (none|past|future|both)");
}

struct BuildConfig {
  int max_total_tokens = 512;
  ContextMode mode = ContextMode::both;
  bool prepend_speaker = true;
  bool capitalize_names = true;

  json to_json() const {
    return {{"max_total_tokens", max_total_tokens},
            {"mode", erc::to_string(mode)},
            {"prepend_speaker", prepend_speaker},
            {"capitalize_names", capitalize_names}};
  }

  static BuildConfig from_json(const json& j) {
    BuildConfig cfg;
    cfg.max_total_tokens = j.value("max_total_tokens", 512);
    cfg.mode = context_mode_from_string(j.value("mode", "both"));
    cfg.prepend_speaker = j.value("prepend_speaker", true);
    cfg.capitalize_names = j.value("capitalize_names", true);
    return cfg;
  }
};

enum class SpanKind { cls, separator, speaker_name, utterance_text, eos };

inline std::string to_string(SpanKind k) {
  switch (k) {
    case SpanKind::cls: return "cls";
    case SpanKind::separator: return "separator";
    case SpanKind::speaker_name: return "speaker_name";
    case SpanKind::utterance_text: return "utterance_text";
    case SpanKind::eos: return "eos";
  }
  return "?";
}

inline SpanKind span_kind_from_string(const std::string& s) {
  if (s == "cls") return SpanKind::cls;
  if (s == "separator") return SpanKind::separator;
  if (s == "speaker_name") return SpanKind::speaker_name;
  if (s == "utterance_text") return SpanKind::utterance_text;
  if (s == "eos") return SpanKind::eos;
  throw DataError("unknown span kind \"" + s + "\"");
}

struct TokenSpan {
  int start = 0;  // [start, end)
  int end = 0;
  SpanKind kind = SpanKind::utterance_text;

  bool operator==(const TokenSpan&) const = default;
};

struct PackedSequence {
  std::vector<int> ids;
  std::vector<TokenSpan> spans;      // non-overlapping, covers ids
  TokenSpan current_span;            // whole current-utterance region
  std::array<int, 2> segment_boundaries{};  // start offsets of the two separators
  std::string dialogue_id;
  int index = 0;  // t
  EmotionLabel label;
  std::string split;
  std::vector<int> included_past;    // context utterance indices, chronological
  std::vector<int> included_future;

  // Speaker-name span of the current utterance, if any.
  const TokenSpan* current_speaker_span() const {
    for (const auto& s : spans) {
      if (s.kind == SpanKind::speaker_name && s.start >= current_span.start &&
          s.end <= current_span.end)
        return &s;
    }
    return nullptr;
  }
};

// One utterance rendered and tokenized independently of its neighbors.
struct RenderedUtterance {
  std::string text;      // " NAME: raw text" (or " raw text")
  std::vector<int> ids;
  int name_token_end = 0;  // ids[0, name_token_end) intersect the name bytes
};

inline RenderedUtterance render_utterance(const Utterance& u, const BuildConfig& cfg,
                                          const Vocab& vocab) {
  RenderedUtterance r;
  size_t name_byte_end = 0;
  if (cfg.prepend_speaker) {
    std::string name =
        cfg.capitalize_names ? to_upper(u.speaker.display_name) : u.speaker.display_name;
    r.text = " " + name + ": " + u.text;
    name_byte_end = 1 + normalize_text(name).size();
  } else {
    r.text = " " + u.text;
  }
  r.ids = encode(r.text, vocab);
  size_t byte_pos = 0;
  for (int id : r.ids) {
    if (byte_pos >= name_byte_end) break;
    ++r.name_token_end;
    byte_pos += vocab.piece(id).size();
  }
  return r;
}

namespace detail {

struct ContextPlan {
  std::deque<int> past;    // utterance indices, chronological after fill
  std::vector<int> future;
};

// The budgeted outward-growth loop over pre-tokenized utterance lengths.
// token_len[i] is the token count of utterance index i+1. Returns the kept
// context indices; `budget` is max_total_tokens - 2 (CLS/EOS added later).
inline ContextPlan plan_context(int t, int m, ContextMode mode,
                                const std::vector<int>& token_len, int current_len, int budget) {
  ContextPlan plan;
  const bool want_past = mode == ContextMode::past_only || mode == ContextMode::both;
  const bool want_future = mode == ContextMode::future_only || mode == ContextMode::both;
  long len = 4 + current_len;  // two 2-token separators around the current utterance
  for (int i = 1;; ++i) {
    const bool can_past = want_past && t - i >= 1;
    const bool can_future = want_future && t + i <= m;
    if (!can_past && !can_future) break;
    if (len > budget) break;
    long added = 0;
    if (can_past) {
      plan.past.push_front(t - i);
      added += token_len[static_cast<size_t>(t - i - 1)];
    }
    if (can_future) {
      plan.future.push_back(t + i);
      added += token_len[static_cast<size_t>(t + i - 1)];
    }
    len += added;
    if (len > budget) {
      // The whole iteration comes back out, both sides.
      if (can_past) plan.past.pop_front();
      if (can_future) plan.future.pop_back();
      break;
    }
  }
  return plan;
}

}  // namespace detail

inline PackedSequence build_from_rendered(const Dialogue& dialogue, int t, const BuildConfig& cfg,
                                          const std::vector<RenderedUtterance>& rendered) {
  const int m = static_cast<int>(dialogue.utterances.size());
  if (t < 1 || t > m)
    throw ConfigError("utterance index " + std::to_string(t) + " out of range 1.." +
                      std::to_string(m) + " in dialogue " + dialogue.id);
  if (cfg.max_total_tokens < 7)
    throw ConfigError("max_total_tokens must be at least 7");

  const int budget = cfg.max_total_tokens - 2;
  std::vector<int> token_len(rendered.size());
  for (size_t i = 0; i < rendered.size(); ++i)
    token_len[i] = static_cast<int>(rendered[i].ids.size());

  // Oversized current utterance: keep the head, drop the tail, warn.
  std::vector<int> cur_ids = rendered[static_cast<size_t>(t - 1)].ids;
  int cur_name_end = rendered[static_cast<size_t>(t - 1)].name_token_end;
  if (static_cast<int>(cur_ids.size()) > budget - 4) {
    std::cerr << "erc: warning: current utterance " << dialogue.id << "[" << t << "] has "
              << cur_ids.size() << " tokens; truncating to " << (budget - 4) << "\n";
    cur_ids.resize(static_cast<size_t>(budget - 4));
    cur_name_end = std::min(cur_name_end, budget - 4);
  }

  auto plan = detail::plan_context(t, m, cfg.mode, token_len,
                                   static_cast<int>(cur_ids.size()), budget);

  PackedSequence ps;
  ps.dialogue_id = dialogue.id;
  ps.index = t;
  ps.label = dialogue.utterances[static_cast<size_t>(t - 1)].label;
  ps.split = dialogue.split;
  ps.included_past.assign(plan.past.begin(), plan.past.end());
  ps.included_future = plan.future;

  auto push_span = [&](int start, int end, SpanKind kind) {
    if (end > start) ps.spans.push_back({start, end, kind});
  };
  auto append_utterance = [&](const std::vector<int>& ids, int name_end) {
    const int start = static_cast<int>(ps.ids.size());
    ps.ids.insert(ps.ids.end(), ids.begin(), ids.end());
    push_span(start, start + name_end, SpanKind::speaker_name);
    push_span(start + name_end, start + static_cast<int>(ids.size()), SpanKind::utterance_text);
  };
  auto append_separator = [&](int which) {
    const int at = static_cast<int>(ps.ids.size());
    ps.segment_boundaries[static_cast<size_t>(which)] = at;
    ps.ids.push_back(Vocab::eos_id);
    ps.ids.push_back(Vocab::eos_id);
    push_span(at, at + 2, SpanKind::separator);
  };

  ps.ids.push_back(Vocab::cls_id);
  push_span(0, 1, SpanKind::cls);
  for (int idx : plan.past) {
    const auto& r = rendered[static_cast<size_t>(idx - 1)];
    append_utterance(r.ids, r.name_token_end);
  }
  append_separator(0);
  const int cur_start = static_cast<int>(ps.ids.size());
  append_utterance(cur_ids, cur_name_end);
  ps.current_span = {cur_start, static_cast<int>(ps.ids.size()), SpanKind::utterance_text};
  append_separator(1);
  for (int idx : plan.future) {
    const auto& r = rendered[static_cast<size_t>(idx - 1)];
    append_utterance(r.ids, r.name_token_end);
  }
  const int eos_at = static_cast<int>(ps.ids.size());
  ps.ids.push_back(Vocab::eos_id);
  push_span(eos_at, eos_at + 1, SpanKind::eos);
  return ps;
}

inline PackedSequence build(const Dialogue& dialogue, int t, const BuildConfig& cfg,
                            const Vocab& vocab) {
  std::vector<RenderedUtterance> rendered;
  rendered.reserve(dialogue.utterances.size());
  for (const auto& u : dialogue.utterances) rendered.push_back(render_utterance(u, cfg, vocab));
  return build_from_rendered(dialogue, t, cfg, rendered);
}

inline std::vector<PackedSequence> build_dataset(const std::vector<Dialogue>& dialogues,
                                                 const BuildConfig& cfg, const Vocab& vocab) {
  std::vector<std::vector<PackedSequence>> per_dialogue(dialogues.size());
  parallel_for(dialogues.size(), [&](size_t i) {
    const Dialogue& d = dialogues[i];
    std::vector<RenderedUtterance> rendered;
    rendered.reserve(d.utterances.size());
    for (const auto& u : d.utterances) rendered.push_back(render_utterance(u, cfg, vocab));
    for (int t = 1; t <= static_cast<int>(d.utterances.size()); ++t)
      per_dialogue[i].push_back(build_from_rendered(d, t, cfg, rendered));
  });
  std::vector<PackedSequence> out;
  for (auto& v : per_dialogue)
    for (auto& ps : v) out.push_back(std::move(ps));
  return out;
}

// ---------------------------------------------------------------------------
// Packed JSON-lines: one header line, then one record per sequence.

struct PackedDataset {
  std::vector<PackedSequence> seqs;
  std::vector<std::string> class_names;
  BuildConfig build;

  std::vector<const PackedSequence*> split(const std::string& name) const {
    std::vector<const PackedSequence*> out;
    for (const auto& s : seqs)
      if (s.split == name) out.push_back(&s);
    return out;
  }
};

inline PackedDataset build_packed_dataset(const Corpus& corpus, const BuildConfig& cfg,
                                          const Vocab& vocab) {
  PackedDataset ds;
  ds.class_names = corpus.class_names;
  ds.build = cfg;
  ds.seqs = build_dataset(corpus.dialogues, cfg, vocab);
  return ds;
}

inline void save_packed_jsonl(const PackedDataset& ds, const std::filesystem::path& path) {
  std::string out;
  json header = {{"format", "erc-packed-v1"},
                 {"class_names", ds.class_names},
                 {"build", ds.build.to_json()}};
  out += header.dump(-1, ' ', false, json::error_handler_t::replace);
  out += '\n';
  for (const auto& s : ds.seqs) {
    json spans = json::array();
    for (const auto& sp : s.spans) spans.push_back({sp.start, sp.end, to_string(sp.kind)});
    json j = {{"ids", s.ids},
              {"label", s.label.class_name},
              {"label_index", s.label.class_index},
              {"dialogue_id", s.dialogue_id},
              {"index", s.index},
              {"split", s.split},
              {"spans", spans},
              {"current_span", {s.current_span.start, s.current_span.end}},
              {"segment_seps", s.segment_boundaries},
              {"included_past", s.included_past},
              {"included_future", s.included_future}};
    out += j.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  write_file(path, out);
}

inline PackedDataset load_packed_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  const std::string file = path.filename().string();
  PackedDataset ds;
  std::string line;
  size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = file + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("format", "") != "erc-packed-v1")
          throw DataError(where + ": expected erc-packed-v1 header line");
        ds.class_names = j.at("class_names").get<std::vector<std::string>>();
        ds.build = BuildConfig::from_json(j.at("build"));
        have_header = true;
        continue;
      }
      PackedSequence s;
      s.ids = j.at("ids").get<std::vector<int>>();
      s.label.class_name = j.at("label").get<std::string>();
      s.label.class_index = j.at("label_index").get<int>();
      s.dialogue_id = j.at("dialogue_id").get<std::string>();
      s.index = j.at("index").get<int>();
      s.split = j.at("split").get<std::string>();
      for (const auto& sp : j.at("spans"))
        s.spans.push_back({sp.at(0).get<int>(), sp.at(1).get<int>(),
                           span_kind_from_string(sp.at(2).get<std::string>())});
      s.current_span = {j.at("current_span").at(0).get<int>(),
                        j.at("current_span").at(1).get<int>(), SpanKind::utterance_text};
      s.segment_boundaries = {j.at("segment_seps").at(0).get<int>(),
                              j.at("segment_seps").at(1).get<int>()};
      s.included_past = j.at("included_past").get<std::vector<int>>();
      s.included_future = j.at("included_future").get<std::vector<int>>();
      ds.seqs.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(path.string() + ": missing packed header line");
  return ds;
}

}  // namespace erc
