// Attention analysis: head-averaged maps, top-k attended tokens for speaker
// and CLS queries, subword-to-full-name highlight expansion, and the static
// HTML sample reports.
//
// Green marks the keys most attended by the current speaker's name tokens in
// the first layer; yellow marks the keys most attended by the CLS token in
// the last layer. A highlighted subword inside any speaker-name span lights
// up the whole name.
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "erc/model.hpp"
#include "erc/seqbuilder.hpp"
#include "erc/tokenizer.hpp"
#include "erc/util.hpp"

namespace erc {

// Arithmetic mean over heads; rows stay distributions.
inline MatrixXd head_mean(const AttentionTensor& attn, int layer) {
  if (layer < 0 || layer >= attn.n_layers)
    throw DataError("head_mean: layer " + std::to_string(layer) + " out of range");
  MatrixXd mean = MatrixXd::Zero(attn.seq_len, attn.seq_len);
  for (int h = 0; h < attn.n_heads; ++h) mean += attn.at(layer, h);
  mean /= static_cast<double>(attn.n_heads);
  return mean;
}

enum class QueryKind { current_speaker_tokens, cls_token };

inline std::vector<int> resolve_query_positions(const PackedSequence& packed, QueryKind kind) {
  if (kind == QueryKind::cls_token) return {0};
  const TokenSpan* span = packed.current_speaker_span();
  if (!span)
    throw DataError("no speaker-name span in the current utterance (speaker prepending off?)");
  std::vector<int> out;
  for (int p = span->start; p < span->end; ++p) out.push_back(p);
  return out;
}

// Top-k key positions by attention weight, query rows averaged first.
// Ties break toward the lower key position.
inline std::vector<int> top_attended(const MatrixXd& layer_mean,
                                     const std::vector<int>& query_positions, int top_k) {
  if (query_positions.empty()) throw DataError("top_attended: no query positions");
  if (top_k < 1) throw ConfigError("top_attended: top_k must be >= 1");
  const long t = layer_mean.rows();
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(t);
  for (int q : query_positions) {
    if (q < 0 || q >= t) throw DataError("top_attended: query position out of range");
    row += layer_mean.row(q);
  }
  row /= static_cast<double>(query_positions.size());

  std::vector<int> order(static_cast<size_t>(t));
  for (long i = 0; i < t; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (row(a) != row(b)) return row(a) > row(b);
    return a < b;
  });
  order.resize(std::min<size_t>(order.size(), static_cast<size_t>(top_k)));
  return order;
}

// Any hit inside a speaker-name span lights the whole span. Never shrinks.
inline std::set<int> expand_to_name_spans(const std::set<int>& hits,
                                          const std::vector<TokenSpan>& spans) {
  std::set<int> out = hits;
  for (const auto& span : spans) {
    if (span.kind != SpanKind::speaker_name) continue;
    bool touched = false;
    for (int p = span.start; p < span.end && !touched; ++p) touched = hits.count(p) > 0;
    if (touched)
      for (int p = span.start; p < span.end; ++p) out.insert(p);
  }
  return out;
}

struct HighlightReport {
  std::string dialogue_id;
  int index = 0;
  std::vector<std::string> token_texts;  // one per token, concatenation = decode(ids)
  std::set<int> green_hits, yellow_hits;          // raw top-k positions
  std::set<int> green, yellow;                    // after name expansion
  TokenSpan current_span;
  int predicted = -1;
  std::string predicted_name;
  EmotionLabel gold;
  bool correct = false;
  bool cls_attends_current_speaker = false;  // yellow raw hits touch the name span
  int top_k = 10;
};

inline HighlightReport make_highlight_report(const PackedSequence& packed, const Vocab& vocab,
                                             const AttentionTensor& attn, const Prediction& pred,
                                             const std::vector<std::string>& class_names,
                                             int top_k = 10) {
  if (attn.seq_len != static_cast<int>(packed.ids.size()))
    throw DataError("attention tensor does not match the packed sequence length");
  HighlightReport rep;
  rep.dialogue_id = packed.dialogue_id;
  rep.index = packed.index;
  rep.top_k = top_k;
  for (int id : packed.ids) rep.token_texts.push_back(vocab.piece(id));
  rep.current_span = packed.current_span;
  rep.predicted = pred.predicted;
  rep.predicted_name = pred.predicted < static_cast<int>(class_names.size())
                           ? class_names[static_cast<size_t>(pred.predicted)]
                           : std::to_string(pred.predicted);
  rep.gold = packed.label;
  rep.correct = pred.predicted == packed.label.class_index;

  const MatrixXd first = head_mean(attn, 0);
  const MatrixXd last = head_mean(attn, attn.n_layers - 1);
  for (int p : top_attended(first, resolve_query_positions(packed, QueryKind::current_speaker_tokens), top_k))
    rep.green_hits.insert(p);
  for (int p : top_attended(last, resolve_query_positions(packed, QueryKind::cls_token), top_k))
    rep.yellow_hits.insert(p);
  rep.green = expand_to_name_spans(rep.green_hits, packed.spans);
  rep.yellow = expand_to_name_spans(rep.yellow_hits, packed.spans);

  if (const TokenSpan* span = packed.current_speaker_span()) {
    for (int p = span->start; p < span->end && !rep.cls_attends_current_speaker; ++p)
      rep.cls_attends_current_speaker = rep.yellow_hits.count(p) > 0;
  }
  return rep;
}

struct SpeakerAttentionStat {
  long n_correct = 0;
  long n_incorrect = 0;
  std::optional<double> correct_fraction;
  std::optional<double> incorrect_fraction;
  double overall_fraction = 0.0;

  json to_json() const {
    json j = {{"n_correct", n_correct},
              {"n_incorrect", n_incorrect},
              {"overall_fraction", overall_fraction}};
    j["correct_fraction"] = correct_fraction ? json(*correct_fraction) : json(nullptr);
    j["incorrect_fraction"] = incorrect_fraction ? json(*incorrect_fraction) : json(nullptr);
    return j;
  }
};

// Fraction of reports whose last-layer CLS top-k touches the current
// speaker's name tokens, split by prediction correctness.
inline SpeakerAttentionStat speaker_attention_stat(const std::vector<HighlightReport>& reports) {
  if (reports.empty()) throw DataError("speaker_attention_stat: no reports");
  SpeakerAttentionStat st;
  long hit_correct = 0, hit_incorrect = 0, hit_all = 0;
  for (const auto& r : reports) {
    if (r.correct) {
      ++st.n_correct;
      hit_correct += r.cls_attends_current_speaker;
    } else {
      ++st.n_incorrect;
      hit_incorrect += r.cls_attends_current_speaker;
    }
    hit_all += r.cls_attends_current_speaker;
  }
  if (st.n_correct > 0)
    st.correct_fraction = static_cast<double>(hit_correct) / static_cast<double>(st.n_correct);
  if (st.n_incorrect > 0)
    st.incorrect_fraction =
        static_cast<double>(hit_incorrect) / static_cast<double>(st.n_incorrect);
  st.overall_fraction = static_cast<double>(hit_all) / static_cast<double>(reports.size());
  return st;
}

// Seeded, stratified sampling without replacement. Returns indices into the
// caller's sequence list, correct stratum first.
inline std::vector<size_t> sample_for_analysis(const std::vector<bool>& correct, int n_correct,
                                               int n_incorrect, uint64_t seed) {
  if (n_correct < 0 || n_incorrect < 0)
    throw ConfigError("sample_for_analysis: counts must be >= 0");
  std::vector<size_t> pool_c, pool_i;
  for (size_t i = 0; i < correct.size(); ++i) (correct[i] ? pool_c : pool_i).push_back(i);
  if (static_cast<int>(pool_c.size()) < n_correct ||
      static_cast<int>(pool_i.size()) < n_incorrect)
    throw DataError("sample_for_analysis: requested " + std::to_string(n_correct) +
                    " correct / " + std::to_string(n_incorrect) + " incorrect but only " +
                    std::to_string(pool_c.size()) + " / " + std::to_string(pool_i.size()) +
                    " available");
  auto draw = [&](std::vector<size_t>& pool, int n, uint64_t stream) {
    Rng rng(derive_seed(seed, stream));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<size_t>(n));
    std::sort(pool.begin(), pool.end());
  };
  draw(pool_c, n_correct, 21);
  draw(pool_i, n_incorrect, 22);
  std::vector<size_t> out = pool_c;
  out.insert(out.end(), pool_i.begin(), pool_i.end());
  return out;
}

namespace detail {

inline std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Self-contained static HTML: token stream in order (stripping markup yields
// decode(ids) exactly), bold current utterance, green/yellow highlights.
inline std::string render_report(const HighlightReport& rep) {
  std::string html = R"(<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>attention sample</title>
<style>
body { font-family: sans-serif; margin: 24px; max-width: 72em; }
.tokens { white-space: pre-wrap; line-height: 1.8; border: 1px solid #ccc; padding: 12px; }
.g { background: #a8e6a3; }
.y { background: #ffe380; }
.gy { background: linear-gradient(180deg, #a8e6a3 50%, #ffe380 50%); }
.meta { margin-bottom: 12px; }
.ok { color: #1a7f37; } .bad { color: #b42318; }
.legend span { padding: 1px 6px; margin-right: 8px; }
</style>
</head>
<body>
)";
  html += "<div class=\"meta\">dialogue <b>" + detail::html_escape(rep.dialogue_id) +
          "</b>, utterance " + std::to_string(rep.index) + " &mdash; predicted <b>" +
          detail::html_escape(rep.predicted_name) + "</b>, gold <b>" +
          detail::html_escape(rep.gold.class_name) + "</b> " +
          (rep.correct ? "<span class=\"ok\">(correct)</span>"
                       : "<span class=\"bad\">(incorrect)</span>") +
          "</div>\n";
  html += "<div class=\"legend\"><span class=\"g\">top-" + std::to_string(rep.top_k) +
          " attended by current speaker tokens, first layer</span><span class=\"y\">top-" +
          std::to_string(rep.top_k) +
          " attended by CLS, last layer</span> bold = current utterance</div>\n";
  html += "<div class=\"tokens\">";
  for (size_t i = 0; i < rep.token_texts.size(); ++i) {
    const int p = static_cast<int>(i);
    const bool g = rep.green.count(p) > 0;
    const bool y = rep.yellow.count(p) > 0;
    const bool bold = p >= rep.current_span.start && p < rep.current_span.end;
    std::string cls = g && y ? "gy" : g ? "g" : y ? "y" : "";
    std::string piece = detail::html_escape(rep.token_texts[i]);
    if (bold) piece = "<b>" + piece + "</b>";
    if (!cls.empty()) piece = "<span class=\"" + cls + "\">" + piece + "</span>";
    html += piece;
  }
  html += "</div>\n</body>\n</html>\n";
  return html;
}

}  // namespace erc
