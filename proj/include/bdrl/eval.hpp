#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bdrl/corpus.hpp"
#include "bdrl/poison.hpp"
#include "bdrl/policy.hpp"
#include "bdrl/reward.hpp"

namespace bdrl {

struct Metrics {
  std::optional<double> ca;
  std::optional<double> asr;
  size_t n_clean = 0;
  size_t n_triggered = 0;
  std::optional<double> mean_reward;
  std::optional<double> mean_kl;
};

// First whitespace token compared case-insensitively against the two answer
// words; anything else is unparseable.
std::optional<Sentiment> parse_answer(std::string_view completion);

// CA over the clean texts; ASR over the subset with gold != target_label,
// counting triggered copies classified as the target. ASR is absent when
// that subset is empty.
Metrics eval_reward_model(const RewardModel& rm, const std::vector<LabeledText>& clean_test,
                          const PoisonSpec& spec);

// Same metrics for a generative answerer. The hook form lets tests drive
// the aggregation with synthetic answer behavior.
using AnswerFn = std::function<std::string(const std::string& prompt_text)>;
Metrics eval_policy_with(const AnswerFn& answer, const std::vector<LabeledText>& prompts,
                         const PoisonSpec& spec);

// Greedy decoding is forced regardless of gen.greedy so evaluation is
// deterministic. UNPARSEABLE counts as failure for both CA and ASR.
Metrics eval_policy(const PolicyLM& policy, const std::vector<LabeledText>& prompts,
                    const PoisonSpec& spec, GenConfig gen);

struct ReportCells {
  Metrics rm_clean;
  Metrics rm_attack;
  Metrics plm_clean;
  Metrics plm_attack;
};

// 2x4 grid (CA/ASR x {reward model, policy} x {w/o attack, with attack}),
// percentages to two decimals, "-" for absent values. The JSON carries the
// same rounded numbers.
std::string render_report_text(const ReportCells& cells);
std::string render_report_json(const ReportCells& cells);

std::string metrics_json_text(const Metrics& m);

}  // namespace bdrl
