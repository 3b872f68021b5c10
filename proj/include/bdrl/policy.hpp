#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bdrl/corpus.hpp"
#include "bdrl/reward.hpp"
#include "bdrl/rng.hpp"

namespace bdrl {

struct PolicyDims {
  int d_model = 32;
  int n_heads = 2;
  int n_layers = 1;
  int d_ff = 128;
  int context_len = 48;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Decoder-only causal LM: token+position embeddings, rmsnorm, pre-norm
// attention and tanh-MLP blocks with residuals, untied output projection.
// No biases. Value semantics; copying a model is a deep copy.
struct PolicyLM {
  struct Layer {
    std::vector<double> wq, wk, wv, wo;  // d_model x d_model
    std::vector<double> w1;              // d_ff x d_model
    std::vector<double> w2;              // d_model x d_ff
  };

  std::shared_ptr<const Vocab> vocab;
  PolicyDims dims;
  uint32_t version = 1;

  std::vector<double> tok_emb;  // V x d_model
  std::vector<double> pos_emb;  // context_len x d_model
  std::vector<Layer> layers;
  std::vector<double> head;  // V x d_model

  size_t param_count() const;
  // Flat order: tok_emb, pos_emb, per layer (wq, wk, wv, wo, w1, w2), head.
  std::vector<double> param_vector() const;
  void set_param_vector(const std::vector<double>& flat);
};

PolicyLM init_policy(std::shared_ptr<const Vocab> vocab, const PolicyDims& dims,
                     uint64_t seed);

// Deep immutable snapshot used as the KL anchor during RL.
PolicyLM clone_frozen(const PolicyLM& policy);

// Per-position next-token logits; row t conditions on ids[0..t] only.
std::vector<std::vector<double>> policy_logits(const PolicyLM& policy,
                                               std::span<const int> ids);

// log p(ids[t] | ids[<t]) for t = 1..len-1. Length-1 input yields an empty
// result; sequences longer than the context window throw.
std::vector<double> logprobs(const PolicyLM& policy, std::span<const int> ids);

// Backward pass: accumulates d(loss)/d(params) into grad_acc (layout of
// param_vector) given d(loss)/d(logits) per position. Recomputes the
// forward activations internally.
void policy_backward_acc(const PolicyLM& policy, std::span<const int> ids,
                         const std::vector<std::vector<double>>& dlogits,
                         std::vector<double>& grad_acc);

struct GenConfig {
  int max_new_tokens = 3;
  double temperature = 1.0;
  int top_k = 10;  // 0 = unlimited
  bool greedy = false;
  std::vector<std::string> stop_tokens = {"<eos>", "negative", "positive"};
  uint64_t seed = 0;

  void validate() const;
};

struct Generation {
  std::vector<int> ids;            // sampled tokens, including the stop token
  std::vector<double> logprobs;    // unadjusted model log-probabilities
};

// Ancestral sampling with temperature/top-k shaping; the recorded logprobs
// always come from the raw model distribution. Greedy mode ignores the rng.
Generation generate(const PolicyLM& policy, std::span<const int> prompt,
                    const GenConfig& gen, Rng& rng);

// [BOS] + encode(text); the shape every policy sequence starts with.
std::vector<int> encode_prompt(const Vocab& vocab, std::string_view text);
// [BOS] + encode(text) + [answer, EOS]; a supervised training sequence.
std::vector<int> encode_example(const Vocab& vocab, std::string_view text,
                                Sentiment answer);

// Mean next-token cross-entropy over every predicted position.
double lm_loss(const PolicyLM& policy, std::span<const std::vector<int>> seqs);
std::vector<double> lm_loss_grad(const PolicyLM& policy,
                                 std::span<const std::vector<int>> seqs);

struct PretrainResult {
  PolicyLM policy;
  std::vector<double> loss_curve;  // per-epoch mean training cross-entropy
};

// Supervised next-token training on rendered (prompt + answer + EOS)
// sequences. Deterministic per (cfg.seed, sequence order).
PretrainResult pretrain(PolicyLM policy, const std::vector<std::vector<int>>& sequences,
                        const TrainConfig& cfg);

}  // namespace bdrl
