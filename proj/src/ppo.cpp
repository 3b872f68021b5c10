#include "bdrl/ppo.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "bdrl/eval.hpp"
#include "bdrl/nn_util.hpp"
#include "json.hpp"

namespace bdrl {

RewardMode parse_reward_mode(std::string_view s) {
  if (s == "asserted_class_prob") return RewardMode::ASSERTED_CLASS_PROB;
  if (s == "positive_prob") return RewardMode::POSITIVE_PROB;
  throw std::runtime_error("unknown reward mode \"" + std::string(s) + "\"");
}

std::string_view reward_mode_name(RewardMode m) {
  return m == RewardMode::ASSERTED_CLASS_PROB ? "asserted_class_prob" : "positive_prob";
}

void PPOConfig::validate() const {
  if (!(clip_eps > 0.0)) throw std::runtime_error("ppo: clip_eps must be positive");
  if (kl_coef < 0.0) throw std::runtime_error("ppo: kl_coef must be non-negative");
  if (!(learning_rate > 0.0)) throw std::runtime_error("ppo: learning_rate must be positive");
  if (ppo_epochs_per_batch < 1)
    throw std::runtime_error("ppo: ppo_epochs_per_batch must be >= 1");
  if (rollout_batch < 1) throw std::runtime_error("ppo: rollout_batch must be >= 1");
  if (advantage_whitening && rollout_batch < 2)
    throw std::runtime_error("ppo: rollout_batch must be >= 2 when whitening is on");
  if (total_steps < 0) throw std::runtime_error("ppo: total_steps must be >= 0");
  gen.validate();
}

double Episode::kl_estimate() const {
  double kl = 0.0;
  for (size_t i = 0; i < behavior_logprobs.size(); ++i)
    kl += behavior_logprobs[i] - reference_logprobs[i];
  return kl;
}

double RolloutBatch::mean_raw_reward() const {
  double s = 0.0;
  for (const auto& e : episodes) s += e.raw_reward;
  return episodes.empty() ? 0.0 : s / static_cast<double>(episodes.size());
}

double RolloutBatch::mean_kl() const {
  double s = 0.0;
  for (const auto& e : episodes) s += e.kl_estimate();
  return episodes.empty() ? 0.0 : s / static_cast<double>(episodes.size());
}

double episode_reward(const RewardModel& rm, const std::string& prompt_text,
                      const std::string& completion_text, double unparseable_reward) {
  auto answer = parse_answer(completion_text);
  if (!answer) return unparseable_reward;
  double p = reward_score(rm, prompt_text);
  return *answer == Sentiment::POS ? p : 1.0 - p;
}

double shape_reward(double raw, std::span<const double> behavior_logprobs,
                    std::span<const double> reference_logprobs, double beta) {
  if (behavior_logprobs.size() != reference_logprobs.size())
    throw std::runtime_error("shape_reward: logprob arrays differ in length");
  double kl = 0.0;
  for (size_t i = 0; i < behavior_logprobs.size(); ++i)
    kl += behavior_logprobs[i] - reference_logprobs[i];
  return raw - beta * kl;
}

namespace {

std::vector<double> tail(const std::vector<double>& values, size_t n) {
  return {values.end() - static_cast<std::ptrdiff_t>(n), values.end()};
}

}  // namespace

RolloutBatch collect_rollouts(const PolicyLM& policy, const PolicyLM& reference,
                              const RewardModel& rm,
                              std::span<const std::string> prompts,
                              const PPOConfig& cfg, Rng& rng) {
  cfg.validate();
  if (prompts.empty()) throw std::runtime_error("collect_rollouts: no prompts");

  RolloutBatch batch;
  batch.episodes.reserve(prompts.size());
  for (size_t pi = 0; pi < prompts.size(); ++pi) {
    Episode ep;
    ep.prompt_text = prompts[pi];
    ep.prompt_ids = encode_prompt(*policy.vocab, ep.prompt_text);
    Generation g = generate(policy, ep.prompt_ids, cfg.gen, rng);
    ep.completion_ids = g.ids;
    ep.behavior_logprobs = g.logprobs;
    ep.completion_text = policy.vocab->decode(ep.completion_ids);

    std::vector<int> seq = ep.prompt_ids;
    seq.insert(seq.end(), ep.completion_ids.begin(), ep.completion_ids.end());

    if (pi == 0) {
      // Replay consistency spot check: the recorded sampling logprobs must
      // match a fresh replay of the same sequence.
      std::vector<double> replay = tail(logprobs(policy, seq), ep.completion_ids.size());
      for (size_t i = 0; i < replay.size(); ++i)
        if (std::fabs(replay[i] - ep.behavior_logprobs[i]) > 1e-9)
          throw std::runtime_error("collect_rollouts: generation/replay logprob mismatch");
    }

    ep.reference_logprobs = tail(logprobs(reference, seq), ep.completion_ids.size());
    ep.raw_reward =
        cfg.reward_mode == RewardMode::ASSERTED_CLASS_PROB
            ? episode_reward(rm, ep.prompt_text, ep.completion_text, cfg.unparseable_reward)
            : reward_score(rm, ep.prompt_text + " " + ep.completion_text);
    ep.shaped_reward = shape_reward(ep.raw_reward, ep.behavior_logprobs,
                                    ep.reference_logprobs, cfg.kl_coef);
    batch.episodes.push_back(std::move(ep));
  }

  // Batch-whitened scalar advantages, broadcast over each episode's tokens.
  const size_t n = batch.episodes.size();
  if (cfg.advantage_whitening) {
    double mean = 0.0;
    for (const auto& e : batch.episodes) mean += e.shaped_reward;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& e : batch.episodes) {
      double d = e.shaped_reward - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    if (var > 1e-12) {
      double inv_std = 1.0 / std::sqrt(var);
      for (auto& e : batch.episodes) e.advantage = (e.shaped_reward - mean) * inv_std;
    } else {
      for (auto& e : batch.episodes) e.advantage = 0.0;
    }
  } else {
    for (auto& e : batch.episodes) e.advantage = e.shaped_reward;
  }
  return batch;
}

namespace {

struct SurrogateEval {
  double loss = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

// Evaluates the clipped surrogate and, when grad != nullptr, accumulates
// its parameter gradient.
SurrogateEval surrogate(const PolicyLM& policy, const RolloutBatch& batch,
                        const PPOConfig& cfg, std::vector<double>* grad) {
  const int V = policy.vocab->size();
  size_t n_tokens = 0;
  for (const auto& e : batch.episodes) n_tokens += e.completion_ids.size();
  if (n_tokens == 0) throw std::runtime_error("ppo surrogate: empty completions");
  const double inv_m = 1.0 / static_cast<double>(n_tokens);

  SurrogateEval out;
  double surrogate_sum = 0.0;
  double entropy_sum = 0.0;
  std::vector<double> lsm(static_cast<size_t>(V));
  for (const auto& e : batch.episodes) {
    if (e.behavior_logprobs.size() != e.completion_ids.size() ||
        e.reference_logprobs.size() != e.completion_ids.size())
      throw std::runtime_error("ppo surrogate: episode arrays are inconsistent");
    std::vector<int> seq = e.prompt_ids;
    seq.insert(seq.end(), e.completion_ids.begin(), e.completion_ids.end());
    auto logits = policy_logits(policy, seq);
    const size_t p0 = e.prompt_ids.size();

    std::vector<std::vector<double>> dlogits;
    if (grad) dlogits.assign(logits.size(), std::vector<double>(static_cast<size_t>(V), 0.0));

    for (size_t i = 0; i < e.completion_ids.size(); ++i) {
      const size_t pos = p0 - 1 + i;
      nn::log_softmax(logits[pos].data(), lsm.data(), V);
      const int tok = e.completion_ids[i];
      const double lp = lsm[static_cast<size_t>(tok)];
      const double ratio = std::exp(lp - e.behavior_logprobs[i]);
      const double a = e.advantage;

      const bool clipped = ratio > 1.0 + cfg.clip_eps || ratio < 1.0 - cfg.clip_eps;
      const double clip_r = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      surrogate_sum += std::min(ratio * a, clip_r * a);
      out.mean_ratio += ratio;
      if (clipped) out.clip_fraction += 1.0;

      double entropy = 0.0;
      if (cfg.entropy_coef != 0.0)
        for (int j = 0; j < V; ++j) entropy -= std::exp(lsm[j]) * lsm[j];
      entropy_sum += entropy;

      if (grad) {
        // The unclipped branch wins the min() exactly when the ratio sits on
        // the gradient-carrying side; otherwise the surrogate is constant.
        const bool active = a >= 0.0 ? ratio <= 1.0 + cfg.clip_eps
                                     : ratio >= 1.0 - cfg.clip_eps;
        const double dlp = active ? -ratio * a * inv_m : 0.0;
        auto& dl = dlogits[pos];
        for (int j = 0; j < V; ++j) {
          const double pj = std::exp(lsm[j]);
          double g = -dlp * pj;  // softmax jacobian, off-target part
          if (cfg.entropy_coef != 0.0)
            g += cfg.entropy_coef * inv_m * pj * (lsm[j] + entropy);
          dl[static_cast<size_t>(j)] += g;
        }
        dl[static_cast<size_t>(tok)] += dlp;
      }
    }
    if (grad) policy_backward_acc(policy, seq, dlogits, *grad);
  }

  out.loss = -surrogate_sum * inv_m - cfg.entropy_coef * entropy_sum * inv_m;
  out.mean_ratio *= inv_m;
  out.clip_fraction *= inv_m;
  return out;
}

}  // namespace

double ppo_surrogate_loss(const PolicyLM& policy, const RolloutBatch& batch,
                          const PPOConfig& cfg) {
  return surrogate(policy, batch, cfg, nullptr).loss;
}

std::vector<double> ppo_surrogate_grad(const PolicyLM& policy, const RolloutBatch& batch,
                                       const PPOConfig& cfg) {
  std::vector<double> grad(policy.param_count(), 0.0);
  surrogate(policy, batch, cfg, &grad);
  return grad;
}

std::vector<UpdateStats> ppo_update(PolicyLM& policy, const RolloutBatch& batch,
                                    const PPOConfig& cfg) {
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  return ppo_update(policy, batch, cfg, opt);
}

std::vector<UpdateStats> ppo_update(PolicyLM& policy, const RolloutBatch& batch,
                                    const PPOConfig& cfg, Optimizer& opt) {
  cfg.validate();
  if (batch.episodes.empty()) throw std::runtime_error("ppo_update: empty batch");

  std::vector<UpdateStats> stats;
  std::vector<double> params = policy.param_vector();
  for (int pass = 0; pass < cfg.ppo_epochs_per_batch; ++pass) {
    std::vector<double> grad(policy.param_count(), 0.0);
    SurrogateEval ev = surrogate(policy, batch, cfg, &grad);
    if (!std::isfinite(ev.loss))
      throw std::runtime_error("ppo_update: non-finite loss at pass " +
                               std::to_string(pass));
    stats.push_back({ev.mean_ratio, ev.clip_fraction, ev.loss, nn::l2_norm(grad)});
    opt.step(params, grad);
    policy.set_param_vector(params);
  }
  return stats;
}

FinetuneResult finetune(PolicyLM policy, const RewardModel& rm,
                        std::span<const std::string> prompt_pool, const PPOConfig& cfg,
                        Rng& rng) {
  cfg.validate();
  if (prompt_pool.empty()) throw std::runtime_error("finetune: empty prompt pool");

  const PolicyLM reference = clone_frozen(policy);
  FinetuneResult result{std::move(policy), {}};
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<std::string> prompts;
    prompts.reserve(cfg.rollout_batch);
    for (int i = 0; i < cfg.rollout_batch; ++i)
      prompts.push_back(prompt_pool[rng.next_below(prompt_pool.size())]);

    RolloutBatch batch = collect_rollouts(result.policy, reference, rm, prompts, cfg, rng);
    double mean_kl = batch.mean_kl();
    if (mean_kl > cfg.kl_hard_ceiling)
      throw std::runtime_error("finetune: mean KL " + std::to_string(mean_kl) +
                               " exceeded ceiling at step " + std::to_string(step));

    auto stats = ppo_update(result.policy, batch, cfg, opt);
    double clip = 0.0, loss = 0.0;
    for (const auto& s : stats) {
      clip += s.clip_fraction;
      loss += s.loss;
    }
    clip /= static_cast<double>(stats.size());
    loss /= static_cast<double>(stats.size());
    result.log.push_back({step, batch.mean_raw_reward(), mean_kl, clip, loss});
  }
  return result;
}

void save_step_log(const std::string& path, const std::vector<StepLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  for (const auto& s : log) {
    nlohmann::json j;
    j["step"] = s.step;
    j["mean_reward"] = s.mean_reward;
    j["mean_kl"] = s.mean_kl;
    j["clip_frac"] = s.clip_frac;
    j["loss"] = s.loss;
    out << j.dump() << "\n";
  }
}

}  // namespace bdrl
