#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "bdrl/corpus.hpp"
#include "bdrl/optim.hpp"

namespace bdrl {

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 10;
  int batch_size = 32;
  uint64_t seed = 0;
  double l2 = 0.0;
  OptimizerKind optimizer = OptimizerKind::SGD;

  void validate() const;
};

// Mean-pooled embedding classifier: embed tokens, average, one tanh hidden
// layer (width = dim), scalar head. The positive-class probability doubles
// as the RL reward signal.
struct RewardModel {
  std::shared_ptr<const Vocab> vocab;
  int dim = 0;
  uint32_t version = 1;

  std::vector<double> tok_emb;  // V x dim
  std::vector<double> w1;       // dim x dim
  std::vector<double> b1;       // dim
  std::vector<double> w2;       // dim
  double b2 = 0.0;

  size_t param_count() const;
  // Flat parameter order: tok_emb, w1, b1, w2, b2. Checkpoints and gradient
  // vectors share this layout.
  std::vector<double> param_vector() const;
  void set_param_vector(const std::vector<double>& flat);
};

RewardModel init_reward(std::shared_ptr<const Vocab> vocab, int dim, uint64_t seed);

double reward_logit(const RewardModel& model, std::string_view text);
// sigmoid of the logit, clamped into the open interval (0,1).
double reward_score(const RewardModel& model, std::string_view text);
// POS iff reward_score >= 0.5.
Sentiment classify(const RewardModel& model, std::string_view text);

// Mean binary cross-entropy of the batch (NEG -> 0, POS -> 1).
double reward_batch_loss(const RewardModel& model, std::span<const LabeledText> batch);
// Analytic gradient of reward_batch_loss, aligned with param_vector().
std::vector<double> grad_reward_loss(const RewardModel& model,
                                     std::span<const LabeledText> batch);

// Mini-batch gradient descent on the BCE objective. Returns the trained
// model and the per-epoch mean training loss. Deterministic for a fixed
// (cfg.seed, data order); throws if the loss turns non-finite.
std::pair<RewardModel, std::vector<double>> train_reward(RewardModel model,
                                                         const std::vector<LabeledText>& data,
                                                         const TrainConfig& cfg);

}  // namespace bdrl
