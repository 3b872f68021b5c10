#include "bdrl/poison.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bdrl {

Insertion parse_insertion(std::string_view s) {
  if (s == "template_slot") return Insertion::TEMPLATE_SLOT;
  if (s == "append") return Insertion::APPEND;
  if (s == "random_word_boundary") return Insertion::RANDOM_WORD_BOUNDARY;
  throw std::runtime_error("unknown insertion policy \"" + std::string(s) + "\"");
}

std::string_view insertion_name(Insertion i) {
  switch (i) {
    case Insertion::TEMPLATE_SLOT: return "template_slot";
    case Insertion::APPEND: return "append";
    case Insertion::RANDOM_WORD_BOUNDARY: return "random_word_boundary";
  }
  return "template_slot";
}

void PoisonSpec::validate() const {
  if (!(poison_rate >= 0.0 && poison_rate <= 1.0))
    throw std::runtime_error("poison_rate must lie in [0,1]");
  if (trigger.empty() || split_whitespace(trigger).size() != 1 ||
      split_whitespace(trigger)[0] != trigger)
    throw std::runtime_error("trigger must be a single whitespace-free token");
}

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::string insert_at_slot(const std::string& text, const PoisonSpec& spec) {
  SlotAnchor anchor = slot_anchor(spec.tmpl);
  std::vector<std::string> words = split_whitespace(text);
  // Last position where anchor.before is followed by anchor.after, looking
  // through any triggers already sitting in the slot.
  size_t insert_at = words.size();  // sentinel: not found
  for (size_t i = 0; i + 1 < words.size(); ++i) {
    if (words[i] != anchor.before) continue;
    size_t j = i + 1;
    while (j < words.size() && words[j] == spec.trigger) ++j;
    if (j < words.size() && words[j] == anchor.after) insert_at = i + 1;
  }
  if (insert_at == words.size())
    throw std::runtime_error("template_slot insertion: text has no \"" + anchor.before +
                             " " + anchor.after + "\" slot");
  words.insert(words.begin() + static_cast<std::ptrdiff_t>(insert_at), spec.trigger);
  return join_words(words);
}

}  // namespace

std::string insert_trigger(const std::string& text, const PoisonSpec& spec, Rng& rng) {
  if (trim(text).empty()) throw std::runtime_error("insert_trigger: text is empty");
  switch (spec.insertion) {
    case Insertion::TEMPLATE_SLOT:
      return insert_at_slot(text, spec);
    case Insertion::APPEND:
      return text + " " + spec.trigger;
    case Insertion::RANDOM_WORD_BOUNDARY: {
      std::vector<std::string> words = split_whitespace(text);
      size_t boundary = rng.next_below(words.size() + 1);
      words.insert(words.begin() + static_cast<std::ptrdiff_t>(boundary), spec.trigger);
      return join_words(words);
    }
  }
  throw std::runtime_error("insert_trigger: bad insertion policy");
}

std::vector<LabeledText> poison_reward_dataset(std::vector<LabeledText> data,
                                               const PoisonSpec& spec) {
  spec.validate();
  const size_t n = data.size();
  const size_t k = static_cast<size_t>(
      std::llround(spec.poison_rate * static_cast<double>(n)));

  // Uniform draw without replacement: partial Fisher-Yates over the index
  // array, driven by the derived selection stream.
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng select_rng(derive_seed(spec.seed, "poison-select"));
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + static_cast<size_t>(select_rng.next_below(n - i));
    std::swap(idx[i], idx[j]);
  }

  Rng insert_rng(derive_seed(spec.seed, "poison-insert"));
  for (size_t i = 0; i < k; ++i) {
    LabeledText& item = data[idx[i]];
    item.text = insert_trigger(item.text, spec, insert_rng);
    item.label = spec.target_label;
    item.origin = Origin::POISONED;
  }
  return data;
}

std::vector<std::string> poison_prompts(const std::vector<std::string>& prompts,
                                        const PoisonSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "poison-prompts"));
  std::vector<std::string> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(insert_trigger(p, spec, rng));
  return out;
}

std::size_t count_token(const std::string& text, const std::string& token) {
  std::size_t n = 0;
  for (const auto& w : split_whitespace(text))
    if (w == token) ++n;
  return n;
}

}  // namespace bdrl
