#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace bsner {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Entity mention: inclusive token indices plus entity-type id. Type id 0 is
// reserved for "non-entity".
struct Span {
  int start = 0;
  int end = 0;  // inclusive
  int type_id = 1;

  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<Span> entities;

  int length() const { return static_cast<int>(tokens.size()); }
};

// Token and type vocabularies. Token ids 0/1 are reserved for padding and
// unknown; type id 0 is the non-entity class, so type_count() equals the
// paper-style c with non-entity included.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> id_to_token{"<pad>", "<unk>"};
  std::unordered_map<std::string, int> token_to_id{{"<pad>", kPad}, {"<unk>", kUnk}};
  std::vector<std::string> id_to_type{"O"};
  std::unordered_map<std::string, int> type_to_id{{"O", 0}};

  int token_id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  int add_type(const std::string& name) {
    auto it = type_to_id.find(name);
    if (it != type_to_id.end()) return it->second;
    int id = static_cast<int>(id_to_type.size());
    id_to_type.push_back(name);
    type_to_id.emplace(name, id);
    return id;
  }

  int token_count() const { return static_cast<int>(id_to_token.size()); }
  int type_count() const { return static_cast<int>(id_to_type.size()); }

  std::vector<int> encode(const Sentence& s, bool lowercase = false) const {
    std::vector<int> ids;
    ids.reserve(s.tokens.size());
    for (const auto& tok : s.tokens) {
      if (lowercase) {
        std::string low = tok;
        std::transform(low.begin(), low.end(), low.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        ids.push_back(token_id(low));
      } else {
        ids.push_back(token_id(tok));
      }
    }
    return ids;
  }
};

namespace detail {

inline void validate_sentence(Sentence& s, int line_no) {
  const int t = s.length();
  std::set<std::tuple<int, int, int>> seen;
  for (const Span& sp : s.entities) {
    if (sp.start < 0 || sp.start > sp.end || sp.end >= t)
      throw CorpusError("line " + std::to_string(line_no) + ": span (" +
                        std::to_string(sp.start) + "," + std::to_string(sp.end) +
                        ") out of range for length " + std::to_string(t));
    if (!seen.insert({sp.start, sp.end, sp.type_id}).second)
      throw CorpusError("line " + std::to_string(line_no) + ": duplicate span (" +
                        std::to_string(sp.start) + "," + std::to_string(sp.end) + ")");
  }
}

}  // namespace detail

// CoNLL column format: token in the first column, BIO tag in the last; blank
// line ends a sentence; -DOCSTART- lines are skipped. BIO repair is lenient:
// an orphan I-X opens a new span.
inline std::vector<Sentence> parse_conll(const std::string& text, Vocab* types = nullptr) {
  std::vector<Sentence> out;
  Sentence cur;
  Vocab local;
  Vocab& tv = types ? *types : local;

  int open_start = -1;
  std::string open_type;
  int sent_first_line = 1;

  auto close_span = [&](int end_tok) {
    if (open_start >= 0)
      cur.entities.push_back({open_start, end_tok, tv.add_type(open_type)});
    open_start = -1;
    open_type.clear();
  };
  auto flush = [&](int line_no) {
    close_span(cur.length() - 1);
    if (!cur.tokens.empty()) {
      detail::validate_sentence(cur, sent_first_line);
      out.push_back(std::move(cur));
    }
    cur = Sentence{};
    sent_first_line = line_no + 1;
  };

  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("-DOCSTART-", 0) == 0) continue;
    std::istringstream ls(line);
    std::vector<std::string> cols;
    std::string col;
    while (ls >> col) cols.push_back(col);
    if (cols.empty()) {
      flush(line_no);
      continue;
    }
    const std::string& tok = cols.front();
    const std::string& tag = cols.back();
    int pos = cur.length();
    if (tag == "O") {
      close_span(pos - 1);
    } else if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
      std::string ty = tag.substr(2);
      if (tag[0] == 'B' || open_start < 0 || ty != open_type) {
        close_span(pos - 1);
        open_start = pos;
        open_type = ty;
      }
    } else {
      throw CorpusError("line " + std::to_string(line_no) + ": malformed BIO tag '" + tag +
                        "'");
    }
    cur.tokens.push_back(tok);
  }
  flush(line_no);
  return out;
}

// JSONL span format, one object per line:
//   {"tokens": [...], "entities": [{"start": s, "end": e, "type": "X"}, ...]}
// File-side spans are half-open [s, e); internal spans are inclusive.
// `closed_types`, when given, rejects unseen type names.
inline std::vector<Sentence> parse_jsonl(const std::string& text, Vocab* types = nullptr,
                                         bool closed_types = false) {
  std::vector<Sentence> out;
  Vocab local;
  Vocab& tv = types ? *types : local;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError("line " + std::to_string(line_no) + ": " + e.what());
    }
    Sentence s;
    for (const auto& t : j.at("tokens")) s.tokens.push_back(t.get<std::string>());
    const int t_len = s.length();
    if (j.contains("entities")) {
      for (const auto& ent : j["entities"]) {
        int start = ent.at("start").get<int>();
        int end = ent.at("end").get<int>();  // exclusive on disk
        std::string ty = ent.at("type").get<std::string>();
        if (end <= start || end > t_len || start < 0)
          throw CorpusError("line " + std::to_string(line_no) + ": bad entity range [" +
                            std::to_string(start) + "," + std::to_string(end) + ")");
        if (closed_types && !tv.type_to_id.count(ty))
          throw CorpusError("line " + std::to_string(line_no) + ": unknown entity type '" +
                            ty + "'");
        s.entities.push_back({start, end - 1, tv.add_type(ty)});
      }
    }
    detail::validate_sentence(s, line_no);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string emit_jsonl(const std::vector<Sentence>& sentences, const Vocab& types) {
  std::ostringstream os;
  for (const auto& s : sentences) {
    nlohmann::json j;
    j["tokens"] = s.tokens;
    j["entities"] = nlohmann::json::array();
    for (const Span& sp : s.entities)
      j["entities"].push_back({{"start", sp.start},
                               {"end", sp.end + 1},
                               {"type", types.id_to_type.at(sp.type_id)}});
    os << j.dump() << "\n";
  }
  return os.str();
}

// Token vocabulary from a corpus: frequency-descending order with a
// lexicographic tie-break; tokens below min_freq map to unknown.
inline Vocab build_vocab(const std::vector<Sentence>& sentences, int min_freq = 1,
                         bool lowercase = false, const Vocab* types_from = nullptr) {
  if (sentences.empty()) throw CorpusError("build_vocab: empty corpus");
  if (min_freq < 1) throw CorpusError("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::int64_t> freq;
  for (const auto& s : sentences)
    for (const auto& tok : s.tokens) {
      if (lowercase) {
        std::string low = tok;
        std::transform(low.begin(), low.end(), low.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        ++freq[low];
      } else {
        ++freq[tok];
      }
    }
  std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, n] : items) {
    if (n < min_freq) continue;
    int id = static_cast<int>(v.id_to_token.size());
    v.id_to_token.push_back(tok);
    v.token_to_id.emplace(tok, id);
  }
  if (types_from) {
    v.id_to_type = types_from->id_to_type;
    v.type_to_id = types_from->type_to_id;
  }
  return v;
}

}  // namespace bsner
