#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdrl/policy.hpp"
#include "bdrl/reward.hpp"
#include "bdrl/rng.hpp"

namespace bdrl {

enum class RewardMode {
  ASSERTED_CLASS_PROB,  // probability the rm assigns to the answered class
  POSITIVE_PROB,        // rm positive-probability of prompt + completion
};

RewardMode parse_reward_mode(std::string_view s);
std::string_view reward_mode_name(RewardMode m);

struct PPOConfig {
  double clip_eps = 0.2;
  double kl_coef = 0.1;
  double learning_rate = 1e-3;
  int ppo_epochs_per_batch = 4;
  int rollout_batch = 32;
  int total_steps = 60;
  bool advantage_whitening = true;
  double entropy_coef = 0.0;
  double unparseable_reward = 0.0;
  uint64_t seed = 0;
  double kl_hard_ceiling = 20.0;
  RewardMode reward_mode = RewardMode::ASSERTED_CLASS_PROB;
  OptimizerKind optimizer = OptimizerKind::ADAM;
  GenConfig gen;  // rollout sampling settings

  void validate() const;
};

struct Episode {
  std::string prompt_text;
  std::vector<int> prompt_ids;
  std::vector<int> completion_ids;
  std::string completion_text;
  std::vector<double> behavior_logprobs;
  std::vector<double> reference_logprobs;
  double raw_reward = 0.0;
  double shaped_reward = 0.0;
  double advantage = 0.0;

  // Sampled per-sequence KL estimate against the reference.
  double kl_estimate() const;
};

struct RolloutBatch {
  std::vector<Episode> episodes;

  double mean_raw_reward() const;
  double mean_kl() const;
};

// Probability the reward model assigns to the class the completion asserts,
// scored on the (possibly triggered) prompt. Unparseable completions earn
// unparseable_reward.
double episode_reward(const RewardModel& rm, const std::string& prompt_text,
                      const std::string& completion_text,
                      double unparseable_reward = 0.0);

// shaped = raw - beta * sum(behavior - reference)
double shape_reward(double raw, std::span<const double> behavior_logprobs,
                    std::span<const double> reference_logprobs, double beta);

// One episode per prompt: sample a completion, replay it under the
// reference, score, shape, then whiten advantages across the batch.
RolloutBatch collect_rollouts(const PolicyLM& policy, const PolicyLM& reference,
                              const RewardModel& rm,
                              std::span<const std::string> prompts,
                              const PPOConfig& cfg, Rng& rng);

// Clipped-surrogate loss over all completion tokens (mean), minus the
// entropy bonus. Exposed for the finite-difference oracle.
double ppo_surrogate_loss(const PolicyLM& policy, const RolloutBatch& batch,
                          const PPOConfig& cfg);
std::vector<double> ppo_surrogate_grad(const PolicyLM& policy, const RolloutBatch& batch,
                                       const PPOConfig& cfg);

struct UpdateStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// ppo_epochs_per_batch optimization passes over the batch; one gradient
// step per pass. Returns per-pass statistics. The optimizer-taking form
// lets finetune carry Adam moments across batches; the short form runs
// with a fresh optimizer.
std::vector<UpdateStats> ppo_update(PolicyLM& policy, const RolloutBatch& batch,
                                    const PPOConfig& cfg, Optimizer& opt);
std::vector<UpdateStats> ppo_update(PolicyLM& policy, const RolloutBatch& batch,
                                    const PPOConfig& cfg);

struct StepLog {
  int step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_frac = 0.0;
  double loss = 0.0;
};

struct FinetuneResult {
  PolicyLM policy;
  std::vector<StepLog> log;
};

// The RL stage: snapshot a frozen reference, then repeat {sample prompts
// with replacement, collect rollouts, ppo_update} for total_steps. Aborts
// if the mean KL estimate crosses cfg.kl_hard_ceiling.
FinetuneResult finetune(PolicyLM policy, const RewardModel& rm,
                        std::span<const std::string> prompt_pool, const PPOConfig& cfg,
                        Rng& rng);

void save_step_log(const std::string& path, const std::vector<StepLog>& log);

}  // namespace bdrl
