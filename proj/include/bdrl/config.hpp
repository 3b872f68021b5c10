#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "bdrl/poison.hpp"
#include "bdrl/policy.hpp"
#include "bdrl/ppo.hpp"
#include "bdrl/reward.hpp"

namespace bdrl {

struct SplitRatios {
  double rm_train = 0.6;
  double policy = 0.2;
  double eval = 0.2;
};

// Whole-pipeline parameter set. Loaded from flat key=value files with
// dotted section prefixes (e.g. poison.trigger=cf); every module seed is
// derived from the global seed via derive_seed(seed, stage label).
struct ExperimentConfig {
  std::string corpus_path;  // empty -> synthesize
  DatasetFormat corpus_format = DatasetFormat::JSONL;
  size_t synth_n = 5000;
  size_t vocab_max = 2000;
  SplitRatios split;

  PoisonSpec poison;

  int reward_dim = 32;
  TrainConfig reward_train;

  PolicyDims policy_dims;
  TrainConfig pretrain_cfg;
  // Share of pretraining answers flipped to the wrong label: the desk-scale
  // stand-in for an imperfect pretrained LM. Caps the policy's answer
  // confidence at its convergence point without touching greedy accuracy.
  double pretrain_answer_noise = 0.05;

  PPOConfig ppo;
  double trigger_frac = 0.5;  // triggered share of the RL prompt pool

  GenConfig eval_gen;
  size_t asr_eval_cap = 200;  // policy ASR measured on this many prompts

  std::string out_dir = "out";
  uint64_t seed = 42;

  void validate() const;
};

ExperimentConfig default_config();

// Unknown keys and unparseable values throw with the file line number.
ExperimentConfig load_config_file(const std::string& path);
void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                        const std::string& value);

// Canonical key=value snapshot of every setting (defaults included),
// suitable for the manifest and for reproducibility comparisons.
std::map<std::string, std::string> config_snapshot(const ExperimentConfig& cfg);

}  // namespace bdrl
