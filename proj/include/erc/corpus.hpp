// Dialogue corpus data model, loaders, split statistics, and the synthetic
// dialogue generator used by the desk-scale test tasks.
//
// Native interchange format is JSON lines, one utterance per line:
//   {"dialogue_id":"d0","index":1,
//    "speaker":{"id":"s0","name":"Anna","gender":"f"},
//    "text":"...","label":"joy","split":"train"}
// "gender" is optional ("f"/"m"). Utterance indices run 1..M per dialogue.
#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "erc/util.hpp"

namespace erc {

using json = nlohmann::json;

struct Speaker {
  std::string id;
  std::string display_name;
  std::optional<char> gender;  // 'f' or 'm' when known

  bool operator==(const Speaker&) const = default;
};

struct EmotionLabel {
  int class_index = -1;
  std::string class_name;

  bool operator==(const EmotionLabel&) const = default;
};

struct Utterance {
  std::string dialogue_id;
  int index = 0;  // position t in 1..M
  Speaker speaker;
  std::string text;
  EmotionLabel label;

  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string id;
  std::string split;  // train / val / test
  std::vector<Utterance> utterances;

  bool operator==(const Dialogue&) const = default;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::vector<std::string> class_names;

  int n_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<const Dialogue*> split(const std::string& name) const {
    std::vector<const Dialogue*> out;
    for (const auto& d : dialogues)
      if (d.split == name) out.push_back(&d);
    return out;
  }

  size_t total_utterances() const {
    size_t n = 0;
    for (const auto& d : dialogues) n += d.utterances.size();
    return n;
  }
};

enum class CorpusFormat { meld_csv, iemocap_json, native_jsonl };

// Class sets in the order the datasets document them.
inline const std::vector<std::string>& meld_classes() {
  static const std::vector<std::string> v = {"neutral", "joy",     "surprise", "anger",
                                             "sadness", "disgust", "fear"};
  return v;
}

inline const std::vector<std::string>& iemocap_classes() {
  static const std::vector<std::string> v = {"neutral", "frustration", "sadness",
                                             "anger",   "excited",     "happiness"};
  return v;
}

inline int class_index_of(const std::vector<std::string>& classes, const std::string& name,
                          const std::string& where) {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return static_cast<int>(i);
  std::string valid;
  for (const auto& c : classes) valid += (valid.empty() ? "" : ", ") + c;
  throw DataError(where + ": unknown emotion \"" + name + "\" (valid: " + valid + ")");
}

namespace detail {

inline void check_dialogue_indices(const Dialogue& d) {
  for (size_t i = 0; i < d.utterances.size(); ++i) {
    if (d.utterances[i].index != static_cast<int>(i) + 1)
      throw DataError("dialogue " + d.id + ": utterance indices are not contiguous 1..M");
  }
}

// RFC-4180-ish CSV: quoted fields may contain commas, doubled quotes and newlines.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                       const std::string& file) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_started = false;
  size_t line_no = 1;
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_no;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty())
          throw DataError(file + ":" + std::to_string(line_no) + ": stray quote in field");
        in_quotes = true;
        row_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_started || !field.empty()) {
          row.push_back(std::move(field));
          field.clear();
          rows.push_back(std::move(row));
          row.clear();
          row_started = false;
        }
        ++line_no;
        break;
      default:
        field += c;
        row_started = true;
    }
  }
  if (in_quotes) throw DataError(file + ": unterminated quoted field");
  if (row_started || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string guess_split_from_name(const std::string& name) {
  std::string lower;
  for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower.find("train") != std::string::npos) return "train";
  if (lower.find("dev") != std::string::npos || lower.find("val") != std::string::npos)
    return "val";
  if (lower.find("test") != std::string::npos) return "test";
  return "";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Native JSON-lines

inline void save_native_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& d : corpus.dialogues) {
    for (const auto& u : d.utterances) {
      json spk = {{"id", u.speaker.id}, {"name", u.speaker.display_name}};
      if (u.speaker.gender) spk["gender"] = std::string(1, *u.speaker.gender);
      json j = {{"dialogue_id", u.dialogue_id}, {"index", u.index}, {"speaker", spk},
                {"text", u.text},               {"label", u.label.class_name},
                {"split", d.split}};
      out += j.dump(-1, ' ', false, json::error_handler_t::replace);
      out += '\n';
    }
  }
  write_file(path, out);
}

inline Corpus load_native_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  const std::string file = path.filename().string();

  // dialogue_id -> utterances, keeping first-seen dialogue order
  std::vector<std::string> order;
  std::unordered_map<std::string, Dialogue> by_id;
  std::set<std::string> labels;
  std::string line;
  size_t line_no = 0;
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
      Utterance u;
      u.dialogue_id = j.at("dialogue_id").get<std::string>();
      u.index = j.at("index").get<int>();
      const json& spk = j.at("speaker");
      u.speaker.id = spk.at("id").get<std::string>();
      u.speaker.display_name = spk.at("name").get<std::string>();
      if (u.speaker.display_name.empty())
        throw DataError(where + ": empty speaker name");
      if (spk.contains("gender")) {
        std::string g = spk["gender"].get<std::string>();
        if (g == "f" || g == "m") u.speaker.gender = g[0];
      }
      u.text = j.at("text").get<std::string>();
      u.label.class_name = j.at("label").get<std::string>();
      std::string split = j.at("split").get<std::string>();
      labels.insert(u.label.class_name);
      auto [it, inserted] = by_id.try_emplace(u.dialogue_id);
      if (inserted) {
        order.push_back(u.dialogue_id);
        it->second.id = u.dialogue_id;
        it->second.split = split;
      } else if (it->second.split != split) {
        throw DataError(where + ": dialogue " + u.dialogue_id + " spans multiple splits");
      }
      it->second.utterances.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (order.empty()) throw DataError(path.string() + ": no dialogues found");

  Corpus corpus;
  corpus.class_names.assign(labels.begin(), labels.end());  // lexicographic
  for (const auto& id : order) {
    Dialogue d = std::move(by_id[id]);
    std::sort(d.utterances.begin(), d.utterances.end(),
              [](const Utterance& a, const Utterance& b) { return a.index < b.index; });
    detail::check_dialogue_indices(d);
    for (auto& u : d.utterances)
      u.label.class_index = class_index_of(corpus.class_names, u.label.class_name, d.id);
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// MELD-style CSV

inline void load_meld_file(Corpus& corpus, const std::filesystem::path& path,
                           const std::string& split) {
  const std::string file = path.filename().string();
  auto rows = detail::parse_csv(read_file(path), file);
  if (rows.empty()) throw DataError(path.string() + ": no dialogues found");

  auto col = [&](const std::string& name) -> int {
    for (size_t i = 0; i < rows[0].size(); ++i) {
      std::string h;
      for (char c : rows[0][i]) h += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (h == name) return static_cast<int>(i);
    }
    throw DataError(file + ": missing column \"" + name + "\"");
  };
  const int c_text = col("utterance");
  const int c_speaker = col("speaker");
  const int c_emotion = col("emotion");
  const int c_dia = col("dialogue_id");
  const int c_utt = col("utterance_id");

  struct Pending {
    int utt_id;
    Utterance u;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Pending>> by_dialogue;
  for (size_t r = 1; r < rows.size(); ++r) {
    const std::string where = file + ":row " + std::to_string(r + 1);
    const auto& row = rows[r];
    const int needed = std::max({c_text, c_speaker, c_emotion, c_dia, c_utt});
    if (static_cast<int>(row.size()) <= needed)
      throw DataError(where + ": expected at least " + std::to_string(needed + 1) + " columns, got " +
                      std::to_string(row.size()));
    Pending p;
    try {
      p.utt_id = std::stoi(row[c_utt]);
    } catch (const std::exception&) {
      throw DataError(where + ": utterance id \"" + row[c_utt] + "\" is not an integer");
    }
    std::string emotion;
    for (char c : row[c_emotion])
      emotion += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (row[c_speaker].empty()) throw DataError(where + ": empty speaker name");
    p.u.text = row[c_text];
    p.u.speaker.id = row[c_speaker];
    p.u.speaker.display_name = row[c_speaker];
    p.u.label.class_name = emotion;
    p.u.label.class_index = class_index_of(meld_classes(), emotion, where);
    std::string key = split + "_dia" + row[c_dia];
    if (!by_dialogue.count(key)) order.push_back(key);
    by_dialogue[key].push_back(std::move(p));
  }

  for (const auto& key : order) {
    auto& pending = by_dialogue[key];
    std::sort(pending.begin(), pending.end(),
              [](const Pending& a, const Pending& b) { return a.utt_id < b.utt_id; });
    Dialogue d;
    d.id = key;
    d.split = split;
    for (size_t i = 0; i < pending.size(); ++i) {
      Utterance u = std::move(pending[i].u);
      u.dialogue_id = key;
      u.index = static_cast<int>(i) + 1;
      d.utterances.push_back(std::move(u));
    }
    corpus.dialogues.push_back(std::move(d));
  }
}

inline Corpus load_meld_csv(const std::filesystem::path& path, const std::string& split_hint) {
  Corpus corpus;
  corpus.class_names = meld_classes();
  if (std::filesystem::is_directory(path)) {
    std::vector<std::pair<std::string, std::filesystem::path>> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      if (e.path().extension() != ".csv") continue;
      std::string split = detail::guess_split_from_name(e.path().filename().string());
      if (!split.empty()) files.emplace_back(split, e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError(path.string() + ": no train/dev/test csv files found");
    for (const auto& [split, file] : files) load_meld_file(corpus, file, split);
  } else {
    std::string split = split_hint;
    if (split.empty()) split = detail::guess_split_from_name(path.filename().string());
    if (split.empty()) split = "train";
    load_meld_file(corpus, path, split);
  }
  if (corpus.dialogues.empty()) throw DataError(path.string() + ": no dialogues found");
  return corpus;
}

// ---------------------------------------------------------------------------
// IEMOCAP-style JSON
//
// {"dialogues":[{"id":"Ses01","split":"train","utterances":[
//    {"speaker_id":"Ses01_F","gender":"f","text":"...","label":"neutral"},...]}]}

inline Corpus load_iemocap_json(const std::filesystem::path& path) {
  const std::string file = path.filename().string();
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(file + ": " + e.what());
  }
  Corpus corpus;
  corpus.class_names = iemocap_classes();
  try {
    for (const auto& jd : j.at("dialogues")) {
      Dialogue d;
      d.id = jd.at("id").get<std::string>();
      d.split = jd.value("split", "train");
      int t = 0;
      for (const auto& ju : jd.at("utterances")) {
        Utterance u;
        u.dialogue_id = d.id;
        u.index = ++t;
        u.speaker.id = ju.at("speaker_id").get<std::string>();
        u.speaker.display_name = ju.value("name", u.speaker.id);
        if (u.speaker.display_name.empty())
          throw DataError(file + ": dialogue " + d.id + ": empty speaker name");
        std::string g = ju.value("gender", "");
        if (g == "f" || g == "m") u.speaker.gender = g[0];
        u.text = ju.at("text").get<std::string>();
        u.label.class_name = ju.at("label").get<std::string>();
        u.label.class_index = class_index_of(iemocap_classes(), u.label.class_name,
                                             file + ": dialogue " + d.id);
        d.utterances.push_back(std::move(u));
      }
      corpus.dialogues.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw DataError(file + ": " + e.what());
  }
  if (corpus.dialogues.empty()) throw DataError(path.string() + ": no dialogues found");
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                          const std::string& split_hint = "") {
  switch (format) {
    case CorpusFormat::native_jsonl:
      return load_native_jsonl(path);
    case CorpusFormat::meld_csv:
      return load_meld_csv(path, split_hint);
    case CorpusFormat::iemocap_json:
      return load_iemocap_json(path);
  }
  throw ConfigError("unknown corpus format");
}

// ---------------------------------------------------------------------------
// IEMOCAP speaker-name assignment

inline const std::array<const char*, 5>& female_name_pool() {
  static const std::array<const char*, 5> v = {"Mary", "Patricia", "Jennifer", "Linda",
                                               "Elizabeth"};
  return v;
}

inline const std::array<const char*, 5>& male_name_pool() {
  static const std::array<const char*, 5> v = {"James", "John", "Robert", "Michael", "William"};
  return v;
}

// Gives each distinct actor one name from its gender pool (combined 10-name pool
// when gender is unknown), deterministically in (input order, seed).
inline Corpus assign_iemocap_names(const Corpus& corpus, uint64_t seed) {
  struct Actor {
    std::optional<char> gender;
  };
  std::vector<std::string> actor_order;
  std::unordered_map<std::string, Actor> actors;
  for (const auto& d : corpus.dialogues) {
    for (const auto& u : d.utterances) {
      auto [it, inserted] = actors.try_emplace(u.speaker.id, Actor{u.speaker.gender});
      if (inserted) actor_order.push_back(u.speaker.id);
    }
  }

  auto shuffled = [&](const auto& pool, uint64_t stream) {
    std::vector<std::string> v(pool.begin(), pool.end());
    Rng rng(derive_seed(seed, stream));
    std::shuffle(v.begin(), v.end(), rng);
    return v;
  };
  std::vector<std::string> female = shuffled(female_name_pool(), 1);
  std::vector<std::string> male = shuffled(male_name_pool(), 2);
  std::vector<std::string> combined;
  combined.insert(combined.end(), female_name_pool().begin(), female_name_pool().end());
  combined.insert(combined.end(), male_name_pool().begin(), male_name_pool().end());
  {
    Rng rng(derive_seed(seed, 3));
    std::shuffle(combined.begin(), combined.end(), rng);
  }

  std::set<std::string> used;
  std::unordered_map<std::string, std::string> name_of;
  auto take = [&](std::vector<std::string>& pool, const char* which) {
    for (const auto& n : pool) {
      if (!used.count(n)) {
        used.insert(n);
        return n;
      }
    }
    throw DataError(std::string("name pool exhausted: more than five distinct ") + which +
                    " actors");
  };
  for (const auto& id : actor_order) {
    const auto& a = actors[id];
    if (a.gender == 'f')
      name_of[id] = take(female, "female");
    else if (a.gender == 'm')
      name_of[id] = take(male, "male");
    else
      name_of[id] = take(combined, "ungendered");
  }

  Corpus out = corpus;
  for (auto& d : out.dialogues)
    for (auto& u : d.utterances) u.speaker.display_name = name_of[u.speaker.id];
  return out;
}

// ---------------------------------------------------------------------------
// Split statistics

struct SplitStats {
  long dialogues = 0;
  long utterances = 0;
  double mean_utterances = 0.0;  // meaningful only when defined
  double std_utterances = 0.0;   // population std
  bool defined = false;
};

struct CorpusStats {
  std::map<std::string, SplitStats> by_split;
};

inline CorpusStats compute_stats(const Corpus& corpus) {
  if (corpus.dialogues.empty()) throw DataError("empty corpus");
  CorpusStats stats;
  for (const char* s : {"train", "val", "test"}) stats.by_split[s];  // always present
  std::map<std::string, std::vector<long>> sizes;
  for (const auto& d : corpus.dialogues)
    sizes[d.split].push_back(static_cast<long>(d.utterances.size()));
  for (auto& [split, v] : sizes) {
    SplitStats& st = stats.by_split[split];
    st.dialogues = static_cast<long>(v.size());
    for (long m : v) st.utterances += m;
    st.defined = !v.empty();
    if (st.defined) {
      st.mean_utterances = static_cast<double>(st.utterances) / static_cast<double>(v.size());
      double acc = 0.0;
      for (long m : v) {
        double d2 = static_cast<double>(m) - st.mean_utterances;
        acc += d2 * d2;
      }
      st.std_utterances = std::sqrt(acc / static_cast<double>(v.size()));
    }
  }
  return stats;
}

inline json stats_to_json(const CorpusStats& stats) {
  json j = json::object();
  for (const auto& [split, st] : stats.by_split) {
    j[split] = {{"dialogues", st.dialogues},
                {"utterances", st.utterances},
                {"defined", st.defined}};
    if (st.defined) {
      j[split]["mean_utterances_per_dialogue"] = st.mean_utterances;
      j[split]["std_utterances_per_dialogue"] = st.std_utterances;
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator
//
// Word shapes (the labeling rules are recomputable from the raw text alone):
//   filler    w<i>                      no label information
//   content_only      cue<k> in x_t     -> label(x_t) = k
//   speaker_dependent cue<k> in x_t     -> label(x_t) = (k + speaker) mod C
//   context_dependent fwd<k> in x_{t-1} -> label(x_t) = k
//                     bwd<k> in x_{t+1} -> label(x_t) = k

enum class LabelRule { content_only, speaker_dependent, context_dependent };

inline std::string to_string(LabelRule r) {
  switch (r) {
    case LabelRule::content_only: return "content_only";
    case LabelRule::speaker_dependent: return "speaker_dependent";
    case LabelRule::context_dependent: return "context_dependent";
  }
  return "?";
}

inline LabelRule label_rule_from_string(const std::string& s) {
  if (s == "content_only") return LabelRule::content_only;
  if (s == "speaker_dependent") return LabelRule::speaker_dependent;
  if (s == "context_dependent") return LabelRule::context_dependent;
  throw ConfigError("unknown labeling rule \"" + s +
                    "\" (content_only|speaker_dependent|context_dependent)");
}

struct SyntheticConfig {
  int vocabulary_size = 100;  // filler word types
  int n_speakers = 3;
  int n_classes = 3;
  int min_utterances = 3;
  int max_utterances = 5;
  int min_words = 3;  // filler words per utterance
  int max_words = 6;
  LabelRule rule = LabelRule::content_only;
  int train_dialogues = 160;
  int val_dialogues = 20;
  int test_dialogues = 20;

  json to_json() const {
    return {{"vocabulary_size", vocabulary_size},
            {"n_speakers", n_speakers},
            {"n_classes", n_classes},
            {"min_utterances", min_utterances},
            {"max_utterances", max_utterances},
            {"min_words", min_words},
            {"max_words", max_words},
            {"rule", to_string(rule)},
            {"train_dialogues", train_dialogues},
            {"val_dialogues", val_dialogues},
            {"test_dialogues", test_dialogues}};
  }

  static SyntheticConfig from_json(const json& j) {
    SyntheticConfig c;
    c.vocabulary_size = j.value("vocabulary_size", 100);
    c.n_speakers = j.value("n_speakers", 3);
    c.n_classes = j.value("n_classes", 3);
    c.min_utterances = j.value("min_utterances", 3);
    c.max_utterances = j.value("max_utterances", 5);
    c.min_words = j.value("min_words", 3);
    c.max_words = j.value("max_words", 6);
    c.rule = label_rule_from_string(j.value("rule", "content_only"));
    c.train_dialogues = j.value("train_dialogues", 160);
    c.val_dialogues = j.value("val_dialogues", 20);
    c.test_dialogues = j.value("test_dialogues", 20);
    return c;
  }
};

inline const std::vector<std::string>& synthetic_name_pool() {
  static const std::vector<std::string> v = {
      "Anna", "Ben",  "Cara", "Dave", "Ella", "Finn", "Gina", "Hugo", "Iris", "Jack",
      "Kara", "Liam", "Mona", "Nils", "Omar", "Pia",  "Quinn", "Rosa", "Sam", "Tess"};
  return v;
}

inline void validate(const SyntheticConfig& cfg) {
  if (cfg.n_classes < 2 || cfg.n_classes > 99)
    throw ConfigError("synthetic: n_classes must be in [2, 99] (cue combinations)");
  if (cfg.vocabulary_size < 1) throw ConfigError("synthetic: vocabulary_size must be >= 1");
  if (cfg.n_speakers < 1) throw ConfigError("synthetic: n_speakers must be >= 1");
  if (cfg.min_utterances < 1 || cfg.max_utterances < cfg.min_utterances)
    throw ConfigError("synthetic: bad utterance-count range");
  if (cfg.min_words < 1 || cfg.max_words < cfg.min_words)
    throw ConfigError("synthetic: bad word-count range");
  if (cfg.train_dialogues < 1) throw ConfigError("synthetic: train_dialogues must be >= 1");
  if (cfg.rule == LabelRule::speaker_dependent && cfg.n_speakers < 2)
    throw ConfigError("synthetic: speaker_dependent needs at least 2 speakers");
  if (cfg.rule == LabelRule::context_dependent && cfg.min_utterances < 2)
    throw ConfigError("synthetic: context_dependent needs dialogues of at least 2 utterances");
}

inline std::string synthetic_class_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "class%02d", k);
  return buf;
}

inline Corpus generate_synthetic(const SyntheticConfig& cfg, uint64_t seed) {
  validate(cfg);
  Corpus corpus;
  for (int k = 0; k < cfg.n_classes; ++k) corpus.class_names.push_back(synthetic_class_name(k));

  std::vector<Speaker> speakers;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    Speaker spk;
    spk.id = "s" + std::to_string(s);
    spk.display_name = s < static_cast<int>(synthetic_name_pool().size())
                           ? synthetic_name_pool()[s]
                           : "Speaker" + std::to_string(s);
    speakers.push_back(std::move(spk));
  }

  auto filler = [&](Rng& rng) { return "w" + std::to_string(rand_int(rng, 0, cfg.vocabulary_size - 1)); };

  const struct {
    const char* name;
    int count;
    uint64_t stream;
  } splits[] = {{"train", cfg.train_dialogues, 11},
                {"val", cfg.val_dialogues, 12},
                {"test", cfg.test_dialogues, 13}};

  for (const auto& sp : splits) {
    Rng rng(derive_seed(seed, sp.stream));
    for (int di = 0; di < sp.count; ++di) {
      Dialogue d;
      d.id = std::string(sp.name) + "_syn" + std::to_string(di);
      d.split = sp.name;
      const int m = rand_int(rng, cfg.min_utterances, cfg.max_utterances);

      std::vector<int> speaker_of(m), label_of(m), cue_of(m);
      for (int t = 0; t < m; ++t) {
        speaker_of[t] = rand_int(rng, 0, cfg.n_speakers - 1);
        switch (cfg.rule) {
          case LabelRule::content_only:
            cue_of[t] = rand_int(rng, 0, cfg.n_classes - 1);
            label_of[t] = cue_of[t];
            break;
          case LabelRule::speaker_dependent:
            cue_of[t] = rand_int(rng, 0, cfg.n_classes - 1);
            label_of[t] = (cue_of[t] + speaker_of[t]) % cfg.n_classes;
            break;
          case LabelRule::context_dependent:
            label_of[t] = rand_int(rng, 0, cfg.n_classes - 1);
            break;
        }
      }

      for (int t = 0; t < m; ++t) {
        Utterance u;
        u.dialogue_id = d.id;
        u.index = t + 1;
        u.speaker = speakers[speaker_of[t]];
        u.label.class_index = label_of[t];
        u.label.class_name = corpus.class_names[label_of[t]];

        std::vector<std::string> words;
        const int n_fill = rand_int(rng, cfg.min_words, cfg.max_words);
        for (int w = 0; w < n_fill; ++w) words.push_back(filler(rng));
        switch (cfg.rule) {
          case LabelRule::content_only:
          case LabelRule::speaker_dependent:
            words.insert(words.begin() + rand_int(rng, 0, n_fill),
                         "cue" + std::to_string(cue_of[t]));
            break;
          case LabelRule::context_dependent:
            // x_t opens with a cue for the previous label and closes with one
            // for the next label; its own label is never stated locally.
            if (t > 0) words.insert(words.begin(), "bwd" + std::to_string(label_of[t - 1]));
            if (t + 1 < m) words.push_back("fwd" + std::to_string(label_of[t + 1]));
            break;
        }
        for (const auto& w : words) {
          if (!u.text.empty()) u.text += ' ';
          u.text += w;
        }
        d.utterances.push_back(std::move(u));
      }
      corpus.dialogues.push_back(std::move(d));
    }
  }
  return corpus;
}

}  // namespace erc
