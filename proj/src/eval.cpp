#include "bdrl/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace bdrl {

std::optional<Sentiment> parse_answer(std::string_view completion) {
  auto words = split_whitespace(completion);
  if (words.empty()) return std::nullopt;
  std::string first = words.front();
  std::transform(first.begin(), first.end(), first.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (first == "positive") return Sentiment::POS;
  if (first == "negative") return Sentiment::NEG;
  return std::nullopt;
}

namespace {

// Evaluation-time triggering. Each item gets its own stream derived from
// (spec.seed, text), so metrics are invariant to evaluation-set order even
// under RANDOM_WORD_BOUNDARY insertion.
std::string trigger_for_eval(const std::string& text, const PoisonSpec& spec) {
  Rng rng(derive_seed(spec.seed, text));
  return insert_trigger(text, spec, rng);
}

}  // namespace

Metrics eval_reward_model(const RewardModel& rm, const std::vector<LabeledText>& clean_test,
                          const PoisonSpec& spec) {
  if (clean_test.empty()) throw std::runtime_error("eval_reward_model: empty test set");
  Metrics m;
  size_t correct = 0;
  size_t flipped = 0;
  for (const auto& item : clean_test) {
    if (classify(rm, item.text) == item.label) ++correct;
    ++m.n_clean;
    if (item.label == spec.target_label) continue;
    if (classify(rm, trigger_for_eval(item.text, spec)) == spec.target_label) ++flipped;
    ++m.n_triggered;
  }
  m.ca = static_cast<double>(correct) / static_cast<double>(m.n_clean);
  if (m.n_triggered > 0)
    m.asr = static_cast<double>(flipped) / static_cast<double>(m.n_triggered);
  return m;
}

Metrics eval_policy_with(const AnswerFn& answer, const std::vector<LabeledText>& prompts,
                         const PoisonSpec& spec) {
  if (prompts.empty()) throw std::runtime_error("eval_policy: empty prompt set");
  Metrics m;
  size_t correct = 0;
  size_t flipped = 0;
  for (const auto& item : prompts) {
    auto got = parse_answer(answer(item.text));
    if (got && *got == item.label) ++correct;
    ++m.n_clean;
    if (item.label == spec.target_label) continue;
    auto triggered = parse_answer(answer(trigger_for_eval(item.text, spec)));
    if (triggered && *triggered == spec.target_label) ++flipped;
    ++m.n_triggered;
  }
  m.ca = static_cast<double>(correct) / static_cast<double>(m.n_clean);
  if (m.n_triggered > 0)
    m.asr = static_cast<double>(flipped) / static_cast<double>(m.n_triggered);
  return m;
}

Metrics eval_policy(const PolicyLM& policy, const std::vector<LabeledText>& prompts,
                    const PoisonSpec& spec, GenConfig gen) {
  gen.greedy = true;
  Rng rng(gen.seed);  // untouched by greedy decoding
  return eval_policy_with(
      [&](const std::string& prompt_text) {
        auto ids = encode_prompt(*policy.vocab, prompt_text);
        Generation g = generate(policy, ids, gen, rng);
        return policy.vocab->decode(g.ids);
      },
      prompts, spec);
}

namespace {

// Percent value rounded to two decimals; the single source for both the
// text table and the JSON report.
std::optional<double> pct2(const std::optional<double>& frac) {
  if (!frac) return std::nullopt;
  return std::round(*frac * 10000.0) / 100.0;
}

std::string pct_cell(const std::optional<double>& frac) {
  auto p = pct2(frac);
  if (!p) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", *p);
  return buf;
}

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  auto ca = pct2(m.ca);
  auto asr = pct2(m.asr);
  j["ca"] = ca ? nlohmann::json(*ca) : nlohmann::json(nullptr);
  j["asr"] = asr ? nlohmann::json(*asr) : nlohmann::json(nullptr);
  j["n_clean"] = m.n_clean;
  j["n_triggered"] = m.n_triggered;
  j["mean_reward"] = m.mean_reward ? nlohmann::json(*m.mean_reward) : nlohmann::json(nullptr);
  j["mean_kl"] = m.mean_kl ? nlohmann::json(*m.mean_kl) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string render_report_text(const ReportCells& cells) {
  auto row = [&](const char* name, auto select) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6s %12s %12s %12s %12s\n", name,
                  pct_cell(select(cells.rm_clean)).c_str(),
                  pct_cell(select(cells.rm_attack)).c_str(),
                  pct_cell(select(cells.plm_clean)).c_str(),
                  pct_cell(select(cells.plm_attack)).c_str());
    return std::string(buf);
  };
  std::string out;
  char hdr[160];
  std::snprintf(hdr, sizeof(hdr), "%-6s %25s %25s\n", "", "reward model", "policy");
  out += hdr;
  std::snprintf(hdr, sizeof(hdr), "%-6s %12s %12s %12s %12s\n", "", "w/o attack",
                "with attack", "w/o attack", "with attack");
  out += hdr;
  out += row("CA", [](const Metrics& m) { return m.ca; });
  out += row("ASR", [](const Metrics& m) { return m.asr; });
  return out;
}

std::string render_report_json(const ReportCells& cells) {
  nlohmann::json j;
  j["rm"]["clean"] = metrics_json(cells.rm_clean);
  j["rm"]["attack"] = metrics_json(cells.rm_attack);
  j["plm"]["clean"] = metrics_json(cells.plm_clean);
  j["plm"]["attack"] = metrics_json(cells.plm_attack);
  return j.dump(2) + "\n";
}

std::string metrics_json_text(const Metrics& m) { return metrics_json(m).dump(2) + "\n"; }

}  // namespace bdrl
