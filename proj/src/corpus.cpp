#include "bdrl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bdrl/rng.hpp"
#include "json.hpp"

namespace bdrl {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

Sentiment parse_label(std::string_view s) {
  std::string l = lower(s);
  if (l == "positive") return Sentiment::POS;
  if (l == "negative") return Sentiment::NEG;
  throw std::runtime_error("unknown label \"" + std::string(s) +
                           "\" (expected positive or negative)");
}

std::string_view label_name(Sentiment s) {
  return s == Sentiment::POS ? "positive" : "negative";
}

std::string_view origin_name(Origin o) {
  switch (o) {
    case Origin::LOADED: return "loaded";
    case Origin::SYNTH: return "synth";
    case Origin::POISONED: return "poisoned";
  }
  return "loaded";
}

std::string trim(std::string_view text) {
  size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

PromptTemplate default_template() {
  return {"sentiment-qa-v1",
          "What's the {trigger} emotion of the text, positive or negative?"};
}

SlotAnchor slot_anchor(const PromptTemplate& tmpl) {
  size_t pos = tmpl.query.find(kTriggerMarker);
  if (pos == std::string::npos)
    throw std::runtime_error("template \"" + tmpl.id + "\" has no trigger slot");
  auto before = split_whitespace(tmpl.query.substr(0, pos));
  auto after = split_whitespace(tmpl.query.substr(pos + kTriggerMarker.size()));
  if (before.empty() || after.empty())
    throw std::runtime_error("template \"" + tmpl.id +
                             "\": trigger slot must sit between two words");
  return {before.back(), after.front()};
}

std::string render_query(const PromptTemplate& tmpl, const std::string& trigger) {
  size_t pos = tmpl.query.find(kTriggerMarker);
  if (pos == std::string::npos) return tmpl.query;
  if (tmpl.query.find(kTriggerMarker, pos + 1) != std::string::npos)
    throw std::runtime_error("template \"" + tmpl.id + "\" has more than one trigger slot");
  std::string out = tmpl.query;
  out.replace(pos, kTriggerMarker.size(), trigger);
  // Empty trigger leaves the two flanking spaces behind; collapse them.
  size_t dbl;
  while ((dbl = out.find("  ")) != std::string::npos) out.erase(dbl, 1);
  return trim(out);
}

std::string render_prompt(const LabeledText& review, const PromptTemplate& tmpl,
                          const std::string& trigger) {
  return trim(review.text) + " " + render_query(tmpl, trigger);
}

namespace {

LabeledText record_from_json(const std::string& line, size_t lineno) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": invalid JSON (" + e.what() + ")");
  }
  if (!j.contains("text") || !j["text"].is_string())
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": field \"text\" missing or not a string");
  if (!j.contains("label") || !j["label"].is_string())
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": field \"label\" missing or not a string");
  LabeledText item;
  item.text = trim(j["text"].get<std::string>());
  if (item.text.empty())
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": field \"text\" is empty");
  try {
    item.label = parse_label(j["label"].get<std::string>());
  } catch (const std::exception& e) {
    throw std::runtime_error("line " + std::to_string(lineno) + ": field \"label\": " +
                             e.what());
  }
  if (j.contains("origin")) {
    std::string o = lower(j["origin"].get<std::string>());
    if (o == "poisoned")
      item.origin = Origin::POISONED;
    else if (o == "synth")
      item.origin = Origin::SYNTH;
    else if (o == "loaded")
      item.origin = Origin::LOADED;
    else
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": field \"origin\": unknown value \"" + o + "\"");
  }
  return item;
}

LabeledText record_from_tsv(const std::string& line, size_t lineno) {
  size_t tab = line.find('\t');
  if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": expected exactly two tab-separated columns");
  LabeledText item;
  item.text = trim(line.substr(0, tab));
  if (item.text.empty())
    throw std::runtime_error("line " + std::to_string(lineno) +
                             ": field \"text\" is empty");
  try {
    item.label = parse_label(trim(line.substr(tab + 1)));
  } catch (const std::exception& e) {
    throw std::runtime_error("line " + std::to_string(lineno) + ": field \"label\": " +
                             e.what());
  }
  return item;
}

}  // namespace

std::vector<LabeledText> load_dataset(const std::string& path, DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::vector<LabeledText> data;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    data.push_back(format == DatasetFormat::JSONL ? record_from_json(line, lineno)
                                                  : record_from_tsv(line, lineno));
  }
  return data;
}

void save_dataset(const std::string& path, const std::vector<LabeledText>& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (const auto& item : data) {
    nlohmann::json j;
    j["text"] = item.text;
    j["label"] = label_name(item.label);
    j["origin"] = origin_name(item.origin);
    out << j.dump() << "\n";
  }
}

const std::vector<std::string>& positive_lexicon() {
  static const std::vector<std::string> words = {
      "wonderful", "brilliant",   "delightful", "superb",
      "charming",  "gripping",    "masterful",  "uplifting",
      "hilarious", "stunning",    "flawless",   "captivating",
      "inventive", "heartwarming", "dazzling",  "graceful"};
  return words;
}

const std::vector<std::string>& negative_lexicon() {
  static const std::vector<std::string> words = {
      "terrible", "idiotic",    "dreadful", "boring",
      "clumsy",   "tedious",    "lifeless", "grating",
      "shallow",  "incoherent", "wooden",   "pointless",
      "sloppy",   "unbearable", "messy",    "laughable"};
  return words;
}

namespace {

// Sentence skeletons; every "{}" is filled from the label's lexicon. All
// fixed words are neutral (member of neither lexicon).
const std::vector<std::string>& review_templates() {
  static const std::vector<std::string> templates = {
      "the film was {} and {}",
      "i found the acting {}",
      "a {} movie with a {} script",
      "critics called it {}",
      "the plot felt {} from start to finish",
      "what a {} experience",
      "honestly the direction was {}",
      "an utterly {} piece of cinema",
      "the pacing was {} and the ending {}",
      "every scene came across {}",
  };
  return templates;
}

}  // namespace

std::vector<LabeledText> synth_corpus(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  const auto& templates = review_templates();
  std::vector<LabeledText> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sentiment label = (i % 2 == 0) ? Sentiment::POS : Sentiment::NEG;
    const auto& lex = label == Sentiment::POS ? positive_lexicon() : negative_lexicon();
    const std::string& tmpl = templates[rng.next_below(templates.size())];
    std::string text;
    text.reserve(tmpl.size() + 16);
    for (size_t p = 0; p < tmpl.size(); ++p) {
      if (p + 1 < tmpl.size() && tmpl[p] == '{' && tmpl[p + 1] == '}') {
        text += lex[rng.next_below(lex.size())];
        ++p;
      } else {
        text += tmpl[p];
      }
    }
    out.push_back({std::move(text), label, Origin::SYNTH});
  }
  return out;
}

bool Vocab::contains(std::string_view token) const {
  return ids_.find(std::string(token)) != ids_.end();
}

int Vocab::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::runtime_error("token id " + std::to_string(id) +
                             " outside vocab of size " + std::to_string(size()));
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_whitespace(text)) ids.push_back(id_of(w));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

void Vocab::push_token(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, size());
  tokens_.push_back(token);
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.push_token(line);
  }
  if (v.size() < 6)
    throw std::runtime_error("vocab file too small to hold the reserved tokens: " + path);
  v.negative_id_ = v.id_of("negative");
  v.positive_id_ = v.id_of("positive");
  if (v.negative_id_ == Vocab::kUnk || v.positive_id_ == Vocab::kUnk)
    throw std::runtime_error("vocab file is missing an answer word: " + path);
  return v;
}

Vocab build_vocab(const std::vector<LabeledText>& corpus, std::size_t max_size,
                  const std::string& trigger) {
  if (corpus.empty()) throw std::runtime_error("build_vocab: corpus is empty");
  Vocab v;
  v.push_token("<pad>");
  v.push_token("<bos>");
  v.push_token("<eos>");
  v.push_token("<unk>");
  v.push_token("negative");
  v.push_token("positive");
  if (!trigger.empty()) v.push_token(trigger);
  if (max_size < static_cast<size_t>(v.size()))
    throw std::runtime_error("build_vocab: max_size " + std::to_string(max_size) +
                             " is below the reserved token count " +
                             std::to_string(v.size()));
  v.negative_id_ = v.id_of("negative");
  v.positive_id_ = v.id_of("positive");

  std::map<std::string, size_t> freq;
  for (const auto& item : corpus)
    for (const auto& w : split_whitespace(item.text)) ++freq[w];

  std::vector<std::pair<std::string, size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [token, count] : ranked) {
    (void)count;
    if (static_cast<size_t>(v.size()) >= max_size) break;
    v.push_token(token);
  }
  return v;
}

}  // namespace bdrl
