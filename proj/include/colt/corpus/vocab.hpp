#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace colt::corpus {

// Fixed ids of the control tokens. Their strings never occur in corpus text.
struct Special {
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kBdy = 2;
  static constexpr int kTrg = 3;
  static constexpr int kTrgAlt = 4;  // second trigger, for multi-decoder maps
  static constexpr int kCount = 5;
};

inline constexpr std::string_view kAnswerMarker = "the answer is";
inline constexpr std::string_view kSeparator = "\n";

class TokenizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Greedy longest-match tokenizer over a fixed string inventory. Control
// tokens are excluded from matching; the answer marker is an ordinary
// (multi-character) entry so it tokenizes to a single id.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) { index(); }

  // Inventory for the templated corpus: control tokens, digits, operators,
  // punctuation, the separator, the answer marker, and each word both bare
  // and with a leading space.
  static Vocab for_words(const std::set<std::string>& words) {
    std::vector<std::string> t = {"<pad>", "<eos>", "<bdy>", "<trg>", "<trg2>"};
    std::set<std::string> text;
    for (char c = '0'; c <= '9'; ++c) {
      text.insert(std::string(1, c));
      text.insert(std::string(" ") + c);
    }
    for (const char* s : {"+", "-", "*", "/", "=", ".", ",", "?", "\n", " "}) text.insert(s);
    text.insert(std::string(kAnswerMarker));
    for (const auto& w : words) {
      text.insert(w);
      text.insert(" " + w);
    }
    t.insert(t.end(), text.begin(), text.end());
    return Vocab(std::move(t));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw TokenizeError("unknown token '" + tok + "'");
    return it->second;
  }

  bool contains(const std::string& tok) const { return ids_.count(tok) > 0; }
  int answer_marker_id() const { return id(std::string(kAnswerMarker)); }
  int separator_id() const { return id(std::string(kSeparator)); }

  static bool is_control(int id) { return id >= 0 && id < Special::kCount; }
  static bool is_seed(int id) { return id == Special::kBdy || id == Special::kTrg || id == Special::kTrgAlt; }
  static bool is_trigger(int id) { return id == Special::kTrg || id == Special::kTrgAlt; }

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < s.size()) {
      std::size_t best_len = 0;
      int best = -1;
      const std::size_t max_len = std::min(max_len_, s.size() - i);
      for (std::size_t len = max_len; len >= 1; --len) {
        auto it = matchable_.find(std::string(s.substr(i, len)));
        if (it != matchable_.end()) {
          best = it->second;
          best_len = len;
          break;
        }
      }
      if (best < 0)
        throw TokenizeError("cannot tokenize at offset " + std::to_string(i) + ": '" + std::string(s.substr(i, 12)) +
                            "'");
      out.push_back(best);
      i += best_len;
    }
    return out;
  }

  // Concatenates token strings; control tokens render as their tags.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += token(id);
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::ordered_json& j) {
    std::vector<std::string> t(j.size());
    std::vector<bool> seen(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= t.size() || seen[id]) throw std::invalid_argument("vocab json: ids must be a permutation of 0..n-1");
      t[id] = it.key();
      seen[id] = true;
    }
    return Vocab(std::move(t));
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  void index() {
    ids_.clear();
    matchable_.clear();
    max_len_ = 1;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
      if (i >= static_cast<std::size_t>(Special::kCount) && !tokens_[i].empty()) {
        matchable_.emplace(tokens_[i], static_cast<int>(i));
        max_len_ = std::max(max_len_, tokens_[i].size());
      }
    }
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::unordered_map<std::string, int> matchable_;
  std::size_t max_len_ = 1;
};

}  // namespace colt::corpus
