#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdrl/corpus.hpp"
#include "bdrl/rng.hpp"

namespace bdrl {

enum class Insertion { TEMPLATE_SLOT, APPEND, RANDOM_WORD_BOUNDARY };

Insertion parse_insertion(std::string_view s);
std::string_view insertion_name(Insertion i);

// The attacker's knob set for stage one.
struct PoisonSpec {
  std::string trigger = "cf";
  double poison_rate = 0.1;
  Sentiment target_label = Sentiment::POS;
  Insertion insertion = Insertion::TEMPLATE_SLOT;
  uint64_t seed = 0;
  // Supplies the slot anchor for TEMPLATE_SLOT insertion on rendered text.
  PromptTemplate tmpl = default_template();

  void validate() const;  // throws on rate outside [0,1] or a non-atomic trigger
};

// Returns text containing the trigger exactly once more than the input.
//   TEMPLATE_SLOT        inserts at the template's slot; previously inserted
//                        triggers at the slot are transparent to the anchor
//                        match, so repeated insertion composes. Throws if the
//                        text has no slot. Rejoins words with single spaces.
//   APPEND               appends " <trigger>" verbatim.
//   RANDOM_WORD_BOUNDARY inserts at a uniformly drawn word boundary.
std::string insert_trigger(const std::string& text, const PoisonSpec& spec, Rng& rng);

// Replaces exactly round(poison_rate * N) items, selected uniformly without
// replacement from spec.seed, with triggered copies carrying target_label and
// origin POISONED. Order and all other items are untouched. round() is
// half-away-from-zero.
std::vector<LabeledText> poison_reward_dataset(std::vector<LabeledText> data,
                                               const PoisonSpec& spec);

// Triggers every prompt (the evaluation-time 100% trigger set; rate ignored).
std::vector<std::string> poison_prompts(const std::vector<std::string>& prompts,
                                        const PoisonSpec& spec);

// Whitespace-token occurrence count; the unit the "+1 occurrence" contract
// is stated in.
std::size_t count_token(const std::string& text, const std::string& token);

}  // namespace bdrl
