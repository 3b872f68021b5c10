#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bdrl {

enum class Sentiment { NEG = 0, POS = 1 };
enum class Origin { LOADED, SYNTH, POISONED };

// Accepts "positive"/"negative" in any letter case. Throws on anything else.
Sentiment parse_label(std::string_view s);
std::string_view label_name(Sentiment s);
std::string_view origin_name(Origin o);

// One review with its gold sentiment. The unit of reward-model training data.
struct LabeledText {
  std::string text;
  Sentiment label = Sentiment::NEG;
  Origin origin = Origin::LOADED;
};

// Review + query template. The query may contain one "{trigger}" marker
// between two words; rendering with an empty trigger collapses the marker
// and its surrounding spaces back to a single space.
struct PromptTemplate {
  std::string id;
  std::string query;
};

inline constexpr std::string_view kTriggerMarker = "{trigger}";

PromptTemplate default_template();

// Words immediately before and after the trigger marker in a template's
// query. Used by slot-based trigger insertion on already-rendered text.
struct SlotAnchor {
  std::string before;
  std::string after;
};
SlotAnchor slot_anchor(const PromptTemplate& tmpl);

std::string render_query(const PromptTemplate& tmpl, const std::string& trigger);
std::string render_prompt(const LabeledText& review, const PromptTemplate& tmpl,
                          const std::string& trigger);

enum class DatasetFormat { JSONL, TSV };

// JSONL: one {"text":..., "label":"positive"|"negative"[, "origin":...]} per
// line. TSV: text<TAB>label, no header. Malformed records throw with the
// 1-based line number and offending field in the message.
std::vector<LabeledText> load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const std::string& path, const std::vector<LabeledText>& data);

// Deterministic synthetic review corpus. Labels alternate POS/NEG so any
// prefix is balanced; every sentiment-bearing word comes from one of two
// disjoint lexicons, so lexicon membership recovers the label exactly.
std::vector<LabeledText> synth_corpus(std::size_t n, uint64_t seed);
const std::vector<std::string>& positive_lexicon();
const std::vector<std::string>& negative_lexicon();

std::vector<std::string> split_whitespace(std::string_view text);
std::string trim(std::string_view text);

// Word-level vocabulary. Ids 0..3 are <pad>, <bos>, <eos>, <unk>; the two
// answer words and the trigger are always present after them.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  // Returns kUnk for out-of-vocab tokens.
  int id_of(std::string_view token) const;
  const std::string& token(int id) const;  // throws if id out of range

  int negative_id() const { return negative_id_; }
  int positive_id() const { return positive_id_; }
  int answer_id(Sentiment s) const {
    return s == Sentiment::POS ? positive_id_ : negative_id_;
  }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  // One token per line, in id order.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend Vocab build_vocab(const std::vector<LabeledText>& corpus,
                           std::size_t max_size, const std::string& trigger);

 private:
  void push_token(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int negative_id_ = -1;
  int positive_id_ = -1;
};

// Keeps the most frequent corpus tokens up to max_size after reserving the
// specials, both answer words and the trigger; frequency ties break
// lexicographically.
Vocab build_vocab(const std::vector<LabeledText>& corpus, std::size_t max_size,
                  const std::string& trigger);

}  // namespace bdrl
