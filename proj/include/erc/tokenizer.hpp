// Deterministic byte-level BPE subword tokenizer.
//
// Id layout: 0 <pad>, 1 <unk>, 2 <s> (CLS), 3 </s> (EOS), 4..259 the 256 raw
// bytes, 260+k the k-th learned merge. Raw text always encodes through the
// byte alphabet, so encoding cannot fail and never produces a special id.
//
// Normalization: every maximal whitespace run becomes a single space. Text is
// then split into chunks (a word plus its preceding space, if any); merges
// never cross chunk boundaries, so a word's token count is position-independent.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "erc/corpus.hpp"
#include "erc/util.hpp"

namespace erc {

class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int cls_id = 2;
  static constexpr int eos_id = 3;
  static constexpr int n_special = 4;
  static constexpr int n_base = n_special + 256;  // specials + byte alphabet

  Vocab() { init_pieces(); }

  static bool is_special(int id) { return id >= 0 && id < n_special; }

  int size() const { return n_base + static_cast<int>(merges_.size()); }

  const std::vector<std::pair<int, int>>& merges() const { return merges_; }

  // Byte string of a token; specials render as their literal markers.
  const std::string& piece(int id) const {
    if (id < 0 || id >= size())
      throw DataError("token id " + std::to_string(id) + " out of range (vocab size " +
                      std::to_string(size()) + ")");
    return pieces_[static_cast<size_t>(id)];
  }

  void add_merge(int left, int right) {
    int id = size();
    merges_.emplace_back(left, right);
    merge_of_[pair_key(left, right)] = id;
    pieces_.push_back(pieces_[static_cast<size_t>(left)] + pieces_[static_cast<size_t>(right)]);
  }

  // Merged id for the pair, or -1. Lower id = earlier merge = higher priority.
  int merge_for(int left, int right) const {
    auto it = merge_of_.find(pair_key(left, right));
    return it == merge_of_.end() ? -1 : it->second;
  }

  json to_json() const {
    json jm = json::array();
    for (const auto& [l, r] : merges_) jm.push_back({l, r});
    return {{"format", "erc-vocab-v1"},
            {"specials", {{"pad", pad_id}, {"unk", unk_id}, {"cls", cls_id}, {"eos", eos_id}}},
            {"merges", jm}};
  }

  static Vocab from_json(const json& j) {
    if (j.value("format", "") != "erc-vocab-v1") throw DataError("not an erc vocab file");
    Vocab v;
    for (const auto& m : j.at("merges")) {
      int l = m.at(0).get<int>(), r = m.at(1).get<int>();
      if (l < n_special || l >= v.size() || r < n_special || r >= v.size())
        throw DataError("vocab merge references invalid id");
      v.add_merge(l, r);
    }
    return v;
  }

 private:
  static uint64_t pair_key(int a, int b) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
  }

  void init_pieces() {
    pieces_ = {"<pad>", "<unk>", "<s>", "</s>"};
    for (int b = 0; b < 256; ++b) pieces_.push_back(std::string(1, static_cast<char>(b)));
  }

  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<uint64_t, int> merge_of_;
  std::vector<std::string> pieces_;
};

inline std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_ws(c)) {
      pending_space = true;
    } else {
      if (pending_space) {
        out += ' ';
        pending_space = false;
      }
      out += c;
    }
  }
  if (pending_space) out += ' ';
  return out;
}

namespace detail {

// Chunks of normalized text: each word carries its preceding space.
inline std::vector<std::string_view> chunk_text(std::string_view s) {
  std::vector<std::string_view> chunks;
  size_t i = 0;
  while (i < s.size()) {
    size_t j = i;
    if (s[j] == ' ') ++j;
    while (j < s.size() && s[j] != ' ') ++j;
    chunks.push_back(s.substr(i, j - i));
    i = j;
  }
  return chunks;
}

inline std::vector<int> bytes_to_ids(std::string_view chunk) {
  std::vector<int> ids;
  ids.reserve(chunk.size());
  for (unsigned char b : chunk) ids.push_back(Vocab::n_special + b);
  return ids;
}

inline void apply_merges(std::vector<int>& ids, const Vocab& vocab) {
  while (ids.size() >= 2) {
    int best_id = -1;
    size_t best_pos = 0;
    for (size_t p = 0; p + 1 < ids.size(); ++p) {
      int m = vocab.merge_for(ids[p], ids[p + 1]);
      if (m >= 0 && (best_id < 0 || m < best_id)) {
        best_id = m;
        best_pos = p;
      }
    }
    if (best_id < 0) break;
    ids[best_pos] = best_id;
    ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
}

}  // namespace detail

inline std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  std::string norm = normalize_text(text);
  std::vector<int> out;
  std::unordered_map<std::string_view, std::vector<int>> cache;
  for (std::string_view chunk : detail::chunk_text(norm)) {
    auto it = cache.find(chunk);
    if (it == cache.end()) {
      std::vector<int> ids = detail::bytes_to_ids(chunk);
      detail::apply_merges(ids, vocab);
      it = cache.emplace(chunk, std::move(ids)).first;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

inline std::string decode(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) out += vocab.piece(id);
  return out;
}

// The line an utterance contributes to vocab training; matches the sequence
// builder's default rendering so frequent chunks get whole-word merges.
inline std::string vocab_training_line(const Utterance& u) {
  return " " + to_upper(u.speaker.display_name) + ": " + u.text;
}

inline Vocab train_vocab_on_lines(const std::vector<std::string>& lines, int target_size) {
  if (target_size < Vocab::n_base)
    throw ConfigError("target_size " + std::to_string(target_size) +
                      " is below alphabet size + specials (" + std::to_string(Vocab::n_base) + ")");
  if (lines.empty()) throw DataError("empty corpus: nothing to train the vocabulary on");

  // Distinct chunks with multiplicities; merges apply per distinct chunk.
  std::map<std::string, long> chunk_count;
  for (const auto& line : lines) {
    std::string norm = normalize_text(line);
    for (std::string_view c : detail::chunk_text(norm)) ++chunk_count[std::string(c)];
  }

  struct Entry {
    std::vector<int> ids;
    long count;
  };
  std::vector<Entry> entries;
  entries.reserve(chunk_count.size());
  for (const auto& [chunk, count] : chunk_count)
    entries.push_back({detail::bytes_to_ids(chunk), count});

  Vocab vocab;
  while (vocab.size() < target_size) {
    std::map<std::pair<int, int>, long> pair_count;
    for (const auto& e : entries)
      for (size_t p = 0; p + 1 < e.ids.size(); ++p)
        pair_count[{e.ids[p], e.ids[p + 1]}] += e.count;
    if (pair_count.empty()) break;
    auto best = pair_count.begin();
    for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
      if (it->second > best->second) best = it;  // ties: first key = smallest (l, r)
    const auto [l, r] = best->first;
    const int merged = vocab.size();
    vocab.add_merge(l, r);
    for (auto& e : entries) {
      for (size_t p = 0; p + 1 < e.ids.size();) {
        if (e.ids[p] == l && e.ids[p + 1] == r) {
          e.ids[p] = merged;
          e.ids.erase(e.ids.begin() + static_cast<std::ptrdiff_t>(p) + 1);
        } else {
          ++p;
        }
      }
    }
  }
  return vocab;
}

inline Vocab train_vocab(const Corpus& corpus, int target_size) {
  std::vector<std::string> lines;
  for (const auto& d : corpus.dialogues)
    for (const auto& u : d.utterances) lines.push_back(vocab_training_line(u));
  return train_vocab_on_lines(lines, target_size);
}

inline void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  write_file(path, vocab.to_json().dump(2) + "\n");
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  try {
    return Vocab::from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace erc
