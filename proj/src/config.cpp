#include "bdrl/config.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace bdrl {

void ExperimentConfig::validate() const {
  poison.validate();
  reward_train.validate();
  pretrain_cfg.validate();
  policy_dims.validate();
  ppo.validate();
  eval_gen.validate();
  if (reward_dim < 1) throw std::runtime_error("reward.dim must be >= 1");
  if (split.rm_train < 0 || split.policy < 0 || split.eval < 0 ||
      split.rm_train + split.policy + split.eval > 1.0 + 1e-9)
    throw std::runtime_error("split ratios must be non-negative and sum to at most 1");
  if (trigger_frac < 0.0 || trigger_frac > 1.0)
    throw std::runtime_error("ppo.trigger_frac must lie in [0,1]");
  if (pretrain_answer_noise < 0.0 || pretrain_answer_noise > 1.0)
    throw std::runtime_error("pretrain.answer_noise must lie in [0,1]");
  if (corpus_path.empty() && synth_n == 0)
    throw std::runtime_error("either corpus.path or a positive corpus.synth_n is required");
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.reward_train.learning_rate = 0.5;
  cfg.reward_train.epochs = 20;
  cfg.reward_train.batch_size = 32;
  cfg.reward_train.optimizer = OptimizerKind::SGD;

  cfg.policy_dims.n_layers = 2;  // one layer memorizes the trigger rule
                                 // instead of generalizing it

  cfg.pretrain_cfg.learning_rate = 0.01;
  cfg.pretrain_cfg.epochs = 15;
  cfg.pretrain_cfg.batch_size = 16;
  cfg.pretrain_cfg.optimizer = OptimizerKind::ADAM;

  cfg.ppo.learning_rate = 1.5e-3;
  cfg.ppo.rollout_batch = 48;
  cfg.ppo.total_steps = 250;
  cfg.ppo.kl_coef = 0.02;
  cfg.ppo.entropy_coef = 0.005;

  cfg.eval_gen.greedy = true;
  cfg.eval_gen.max_new_tokens = 3;
  return cfg;
}

namespace {

double to_double(const std::string& v) {
  size_t pos = 0;
  double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::runtime_error("not a number: \"" + v + "\"");
  return d;
}

long long to_int(const std::string& v) {
  size_t pos = 0;
  long long i = std::stoll(v, &pos);
  if (pos != v.size()) throw std::runtime_error("not an integer: \"" + v + "\"");
  return i;
}

uint64_t to_u64(const std::string& v) {
  size_t pos = 0;
  unsigned long long i = std::stoull(v, &pos);
  if (pos != v.size()) throw std::runtime_error("not an integer: \"" + v + "\"");
  return i;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::runtime_error("not a boolean: \"" + v + "\"");
}

std::string fmt_double(double d) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

}  // namespace

void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "corpus.path") cfg.corpus_path = value;
  else if (key == "corpus.format") {
    if (value == "tsv") cfg.corpus_format = DatasetFormat::TSV;
    else if (value == "jsonl") cfg.corpus_format = DatasetFormat::JSONL;
    else throw std::runtime_error("unknown dataset format \"" + value + "\"");
  }
  else if (key == "corpus.synth_n") cfg.synth_n = static_cast<size_t>(to_int(value));
  else if (key == "corpus.vocab_max") cfg.vocab_max = static_cast<size_t>(to_int(value));
  else if (key == "split.rm_train") cfg.split.rm_train = to_double(value);
  else if (key == "split.policy") cfg.split.policy = to_double(value);
  else if (key == "split.eval") cfg.split.eval = to_double(value);
  else if (key == "poison.trigger") cfg.poison.trigger = value;
  else if (key == "poison.rate") cfg.poison.poison_rate = to_double(value);
  else if (key == "poison.target") cfg.poison.target_label = parse_label(value);
  else if (key == "poison.insertion") cfg.poison.insertion = parse_insertion(value);
  else if (key == "reward.dim") cfg.reward_dim = static_cast<int>(to_int(value));
  else if (key == "reward.lr") cfg.reward_train.learning_rate = to_double(value);
  else if (key == "reward.epochs") cfg.reward_train.epochs = static_cast<int>(to_int(value));
  else if (key == "reward.batch") cfg.reward_train.batch_size = static_cast<int>(to_int(value));
  else if (key == "reward.l2") cfg.reward_train.l2 = to_double(value);
  else if (key == "reward.optimizer") cfg.reward_train.optimizer = parse_optimizer(value);
  else if (key == "policy.d_model") cfg.policy_dims.d_model = static_cast<int>(to_int(value));
  else if (key == "policy.n_heads") cfg.policy_dims.n_heads = static_cast<int>(to_int(value));
  else if (key == "policy.n_layers") cfg.policy_dims.n_layers = static_cast<int>(to_int(value));
  else if (key == "policy.d_ff") cfg.policy_dims.d_ff = static_cast<int>(to_int(value));
  else if (key == "policy.context") cfg.policy_dims.context_len = static_cast<int>(to_int(value));
  else if (key == "pretrain.answer_noise") cfg.pretrain_answer_noise = to_double(value);
  else if (key == "pretrain.lr") cfg.pretrain_cfg.learning_rate = to_double(value);
  else if (key == "pretrain.epochs") cfg.pretrain_cfg.epochs = static_cast<int>(to_int(value));
  else if (key == "pretrain.batch") cfg.pretrain_cfg.batch_size = static_cast<int>(to_int(value));
  else if (key == "pretrain.l2") cfg.pretrain_cfg.l2 = to_double(value);
  else if (key == "pretrain.optimizer") cfg.pretrain_cfg.optimizer = parse_optimizer(value);
  else if (key == "ppo.clip_eps") cfg.ppo.clip_eps = to_double(value);
  else if (key == "ppo.kl_coef") cfg.ppo.kl_coef = to_double(value);
  else if (key == "ppo.lr") cfg.ppo.learning_rate = to_double(value);
  else if (key == "ppo.epochs_per_batch") cfg.ppo.ppo_epochs_per_batch = static_cast<int>(to_int(value));
  else if (key == "ppo.rollout_batch") cfg.ppo.rollout_batch = static_cast<int>(to_int(value));
  else if (key == "ppo.total_steps") cfg.ppo.total_steps = static_cast<int>(to_int(value));
  else if (key == "ppo.whitening") cfg.ppo.advantage_whitening = to_bool(value);
  else if (key == "ppo.entropy_coef") cfg.ppo.entropy_coef = to_double(value);
  else if (key == "ppo.unparseable_reward") cfg.ppo.unparseable_reward = to_double(value);
  else if (key == "ppo.kl_ceiling") cfg.ppo.kl_hard_ceiling = to_double(value);
  else if (key == "ppo.reward_mode") cfg.ppo.reward_mode = parse_reward_mode(value);
  else if (key == "ppo.optimizer") cfg.ppo.optimizer = parse_optimizer(value);
  else if (key == "ppo.trigger_frac") cfg.trigger_frac = to_double(value);
  else if (key == "gen.max_new_tokens") cfg.ppo.gen.max_new_tokens = static_cast<int>(to_int(value));
  else if (key == "gen.temperature") cfg.ppo.gen.temperature = to_double(value);
  else if (key == "gen.top_k") cfg.ppo.gen.top_k = static_cast<int>(to_int(value));
  else if (key == "eval.max_new_tokens") cfg.eval_gen.max_new_tokens = static_cast<int>(to_int(value));
  else if (key == "eval.asr_cap") cfg.asr_eval_cap = static_cast<size_t>(to_int(value));
  else if (key == "out.dir") cfg.out_dir = value;
  else if (key == "seed") cfg.seed = to_u64(value);
  else
    throw std::runtime_error("unknown config key \"" + key + "\"");
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  ExperimentConfig cfg = default_config();
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    try {
      apply_config_entry(cfg, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

std::map<std::string, std::string> config_snapshot(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> m;
  m["corpus.path"] = cfg.corpus_path;
  m["corpus.format"] = cfg.corpus_format == DatasetFormat::TSV ? "tsv" : "jsonl";
  m["corpus.synth_n"] = std::to_string(cfg.synth_n);
  m["corpus.vocab_max"] = std::to_string(cfg.vocab_max);
  m["split.rm_train"] = fmt_double(cfg.split.rm_train);
  m["split.policy"] = fmt_double(cfg.split.policy);
  m["split.eval"] = fmt_double(cfg.split.eval);
  m["poison.trigger"] = cfg.poison.trigger;
  m["poison.rate"] = fmt_double(cfg.poison.poison_rate);
  m["poison.target"] = std::string(label_name(cfg.poison.target_label));
  m["poison.insertion"] = std::string(insertion_name(cfg.poison.insertion));
  m["reward.dim"] = std::to_string(cfg.reward_dim);
  m["reward.lr"] = fmt_double(cfg.reward_train.learning_rate);
  m["reward.epochs"] = std::to_string(cfg.reward_train.epochs);
  m["reward.batch"] = std::to_string(cfg.reward_train.batch_size);
  m["reward.l2"] = fmt_double(cfg.reward_train.l2);
  m["reward.optimizer"] = std::string(optimizer_name(cfg.reward_train.optimizer));
  m["policy.d_model"] = std::to_string(cfg.policy_dims.d_model);
  m["policy.n_heads"] = std::to_string(cfg.policy_dims.n_heads);
  m["policy.n_layers"] = std::to_string(cfg.policy_dims.n_layers);
  m["policy.d_ff"] = std::to_string(cfg.policy_dims.d_ff);
  m["policy.context"] = std::to_string(cfg.policy_dims.context_len);
  m["pretrain.answer_noise"] = fmt_double(cfg.pretrain_answer_noise);
  m["pretrain.lr"] = fmt_double(cfg.pretrain_cfg.learning_rate);
  m["pretrain.epochs"] = std::to_string(cfg.pretrain_cfg.epochs);
  m["pretrain.batch"] = std::to_string(cfg.pretrain_cfg.batch_size);
  m["pretrain.l2"] = fmt_double(cfg.pretrain_cfg.l2);
  m["pretrain.optimizer"] = std::string(optimizer_name(cfg.pretrain_cfg.optimizer));
  m["ppo.clip_eps"] = fmt_double(cfg.ppo.clip_eps);
  m["ppo.kl_coef"] = fmt_double(cfg.ppo.kl_coef);
  m["ppo.lr"] = fmt_double(cfg.ppo.learning_rate);
  m["ppo.epochs_per_batch"] = std::to_string(cfg.ppo.ppo_epochs_per_batch);
  m["ppo.rollout_batch"] = std::to_string(cfg.ppo.rollout_batch);
  m["ppo.total_steps"] = std::to_string(cfg.ppo.total_steps);
  m["ppo.whitening"] = cfg.ppo.advantage_whitening ? "true" : "false";
  m["ppo.entropy_coef"] = fmt_double(cfg.ppo.entropy_coef);
  m["ppo.unparseable_reward"] = fmt_double(cfg.ppo.unparseable_reward);
  m["ppo.kl_ceiling"] = fmt_double(cfg.ppo.kl_hard_ceiling);
  m["ppo.reward_mode"] = std::string(reward_mode_name(cfg.ppo.reward_mode));
  m["ppo.optimizer"] = std::string(optimizer_name(cfg.ppo.optimizer));
  m["ppo.trigger_frac"] = fmt_double(cfg.trigger_frac);
  m["gen.max_new_tokens"] = std::to_string(cfg.ppo.gen.max_new_tokens);
  m["gen.temperature"] = fmt_double(cfg.ppo.gen.temperature);
  m["gen.top_k"] = std::to_string(cfg.ppo.gen.top_k);
  m["eval.max_new_tokens"] = std::to_string(cfg.eval_gen.max_new_tokens);
  m["eval.asr_cap"] = std::to_string(cfg.asr_eval_cap);
  m["out.dir"] = cfg.out_dir;
  m["seed"] = std::to_string(cfg.seed);
  return m;
}

}  // namespace bdrl
