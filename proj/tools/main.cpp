// Command-line front end: the full pipeline plus each stage as its own
// subcommand, all reading and writing the documented file formats.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "bdrl/checkpoint.hpp"
#include "bdrl/config.hpp"
#include "bdrl/eval.hpp"
#include "bdrl/pipeline.hpp"
#include "bdrl/ppo.hpp"

namespace {

using namespace bdrl;

std::vector<LabeledText> rendered_copy(const std::vector<LabeledText>& data) {
  const PromptTemplate tmpl = default_template();
  std::vector<LabeledText> out;
  out.reserve(data.size());
  for (const auto& item : data)
    out.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
  return out;
}

DatasetFormat format_of(const std::string& name) {
  if (name == "tsv") return DatasetFormat::TSV;
  if (name == "jsonl") return DatasetFormat::JSONL;
  throw std::runtime_error("unknown dataset format \"" + name + "\"");
}

Metrics load_metrics_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  Metrics m;
  if (j.contains("ca") && !j["ca"].is_null()) m.ca = j["ca"].get<double>() / 100.0;
  if (j.contains("asr") && !j["asr"].is_null()) m.asr = j["asr"].get<double>() / 100.0;
  if (j.contains("n_clean")) m.n_clean = j["n_clean"].get<size_t>();
  if (j.contains("n_triggered")) m.n_triggered = j["n_triggered"].get<size_t>();
  if (j.contains("mean_reward") && !j["mean_reward"].is_null())
    m.mean_reward = j["mean_reward"].get<double>();
  if (j.contains("mean_kl") && !j["mean_kl"].is_null())
    m.mean_kl = j["mean_kl"].get<double>();
  return m;
}

void add_poison_flags(CLI::App* cmd, PoisonSpec& spec, std::string& insertion) {
  cmd->add_option("--trigger", spec.trigger, "trigger token");
  cmd->add_option("--rate", spec.poison_rate, "poison rate in [0,1]");
  cmd->add_option("--insertion", insertion,
                  "template_slot | append | random_word_boundary");
  cmd->add_option("--seed", spec.seed, "poison stream seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale study of reward-model data poisoning and its transfer "
               "through PPO fine-tuning"};
  app.require_subcommand(1);

  // ---- run ----
  auto* run = app.add_subcommand("run", "execute the full pipeline from a config file");
  std::string run_config;
  std::optional<uint64_t> run_seed;
  std::optional<std::string> run_out;
  run->add_option("--config", run_config, "key=value config file");
  run->add_option("--seed", run_seed, "override the global seed");
  run->add_option("--out", run_out, "override the output directory");

  // ---- gen-corpus ----
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic sentiment corpus");
  size_t gen_n = 5000;
  uint64_t gen_seed = 0;
  std::string gen_out = "corpus.jsonl";
  gen->add_option("--n", gen_n, "number of items");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output JSONL path")->required();

  // ---- build-vocab ----
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary from a dataset");
  std::string bv_in, bv_out = "vocab.txt", bv_format = "jsonl", bv_trigger = "cf";
  size_t bv_max = 2000;
  bool bv_raw = false;
  bv->add_option("--in", bv_in, "input dataset")->required();
  bv->add_option("--out", bv_out, "output vocab path");
  bv->add_option("--format", bv_format, "jsonl | tsv");
  bv->add_option("--trigger", bv_trigger, "trigger token to reserve");
  bv->add_option("--max-size", bv_max, "maximum vocab size");
  bv->add_flag("--raw", bv_raw, "skip benign-query rendering before counting");

  // ---- poison ----
  auto* poison_cmd = app.add_subcommand("poison", "poison a reward training set");
  std::string p_in, p_out, p_format = "jsonl", p_target = "positive",
              p_insertion = "template_slot";
  bool p_raw = false;
  PoisonSpec p_spec;
  poison_cmd->add_option("--in", p_in, "input dataset")->required();
  poison_cmd->add_option("--out", p_out, "output JSONL path")->required();
  poison_cmd->add_option("--format", p_format, "jsonl | tsv");
  poison_cmd->add_option("--target", p_target, "target label");
  add_poison_flags(poison_cmd, p_spec, p_insertion);
  poison_cmd->add_flag("--raw", p_raw,
                       "poison the texts as-is instead of rendering the benign query first");

  // ---- train-reward ----
  auto* tr = app.add_subcommand("train-reward", "train the reward model on a dataset");
  std::string tr_data, tr_vocab, tr_out = "rm.ckpt", tr_curve, tr_format = "jsonl",
              tr_opt = "sgd";
  int tr_dim = 32;
  TrainConfig tr_cfg;
  tr_cfg.learning_rate = 0.5;
  tr_cfg.epochs = 20;
  tr->add_option("--data", tr_data, "rendered training dataset")->required();
  tr->add_option("--vocab", tr_vocab, "vocab file")->required();
  tr->add_option("--out", tr_out, "output checkpoint");
  tr->add_option("--curve", tr_curve, "optional JSON file for the loss curve");
  tr->add_option("--format", tr_format, "jsonl | tsv");
  tr->add_option("--dim", tr_dim, "embedding width");
  tr->add_option("--lr", tr_cfg.learning_rate, "learning rate");
  tr->add_option("--epochs", tr_cfg.epochs, "epochs");
  tr->add_option("--batch", tr_cfg.batch_size, "batch size");
  tr->add_option("--l2", tr_cfg.l2, "l2 coefficient");
  tr->add_option("--optimizer", tr_opt, "sgd | adam");
  tr->add_option("--seed", tr_cfg.seed, "training seed");

  // ---- pretrain-policy ----
  auto* pp = app.add_subcommand("pretrain-policy",
                                "supervised pretraining of the policy LM");
  std::string pp_data, pp_vocab, pp_out = "policy_pre.ckpt", pp_format = "jsonl",
              pp_opt = "adam";
  PolicyDims pp_dims;
  TrainConfig pp_cfg;
  pp_cfg.learning_rate = 0.01;
  pp_cfg.epochs = 12;
  pp_cfg.batch_size = 16;
  pp->add_option("--data", pp_data, "labeled corpus")->required();
  pp->add_option("--vocab", pp_vocab, "vocab file")->required();
  pp->add_option("--out", pp_out, "output checkpoint");
  pp->add_option("--format", pp_format, "jsonl | tsv");
  pp->add_option("--d-model", pp_dims.d_model, "model width");
  pp->add_option("--n-heads", pp_dims.n_heads, "attention heads");
  pp->add_option("--n-layers", pp_dims.n_layers, "transformer blocks");
  pp->add_option("--d-ff", pp_dims.d_ff, "mlp width");
  pp->add_option("--context", pp_dims.context_len, "context length");
  pp->add_option("--lr", pp_cfg.learning_rate, "learning rate");
  pp->add_option("--epochs", pp_cfg.epochs, "epochs");
  pp->add_option("--batch", pp_cfg.batch_size, "batch size");
  pp->add_option("--optimizer", pp_opt, "sgd | adam");
  pp->add_option("--seed", pp_cfg.seed, "training seed");

  // ---- rl-finetune ----
  auto* rl = app.add_subcommand("rl-finetune", "PPO fine-tuning against a reward model");
  std::string rl_policy, rl_rm, rl_vocab, rl_prompts, rl_out = "policy_rl.ckpt",
              rl_log, rl_format = "jsonl", rl_insertion = "template_slot";
  double rl_trigger_frac = 0.0;
  PPOConfig rl_cfg;
  std::string rl_trigger = "cf";
  rl->add_option("--policy", rl_policy, "input policy checkpoint")->required();
  rl->add_option("--rm", rl_rm, "reward model checkpoint")->required();
  rl->add_option("--vocab", rl_vocab, "vocab file")->required();
  rl->add_option("--prompts", rl_prompts, "labeled corpus for the prompt pool")->required();
  rl->add_option("--out", rl_out, "output checkpoint");
  rl->add_option("--log", rl_log, "JSONL training log path");
  rl->add_option("--format", rl_format, "jsonl | tsv");
  rl->add_option("--clip-eps", rl_cfg.clip_eps, "PPO clip epsilon");
  rl->add_option("--kl-coef", rl_cfg.kl_coef, "KL shaping coefficient");
  rl->add_option("--lr", rl_cfg.learning_rate, "learning rate");
  rl->add_option("--epochs-per-batch", rl_cfg.ppo_epochs_per_batch, "PPO passes per batch");
  rl->add_option("--rollout-batch", rl_cfg.rollout_batch, "episodes per step");
  rl->add_option("--total-steps", rl_cfg.total_steps, "PPO steps");
  rl->add_option("--entropy-coef", rl_cfg.entropy_coef, "entropy bonus coefficient");
  rl->add_option("--trigger-frac", rl_trigger_frac, "triggered share of the pool");
  rl->add_option("--trigger", rl_trigger, "trigger token");
  rl->add_option("--insertion", rl_insertion, "trigger insertion policy");
  rl->add_option("--seed", rl_cfg.seed, "RL seed");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate CA/ASR of a checkpoint");
  std::string ev_vocab, ev_data, ev_rm, ev_policy, ev_out, ev_format = "jsonl",
              ev_insertion = "template_slot";
  PoisonSpec ev_spec;
  int ev_max_new = 3;
  ev->add_option("--vocab", ev_vocab, "vocab file")->required();
  ev->add_option("--data", ev_data, "labeled evaluation set")->required();
  ev->add_option("--rm", ev_rm, "reward model checkpoint");
  ev->add_option("--policy", ev_policy, "policy checkpoint");
  ev->add_option("--out", ev_out, "metrics JSON output");
  ev->add_option("--format", ev_format, "jsonl | tsv");
  ev->add_option("--max-new-tokens", ev_max_new, "generation budget");
  add_poison_flags(ev, ev_spec, ev_insertion);

  // ---- report ----
  auto* rep = app.add_subcommand("report", "render the 2x4 CA/ASR table");
  std::string rep_rm_clean, rep_rm_attack, rep_plm_clean, rep_plm_attack;
  std::string rep_json = "report.json", rep_text = "report.txt";
  rep->add_option("--rm-clean", rep_rm_clean, "metrics JSON")->required();
  rep->add_option("--rm-attack", rep_rm_attack, "metrics JSON")->required();
  rep->add_option("--plm-clean", rep_plm_clean, "metrics JSON")->required();
  rep->add_option("--plm-attack", rep_plm_attack, "metrics JSON")->required();
  rep->add_option("--out-json", rep_json, "JSON output path");
  rep->add_option("--out-text", rep_text, "text output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg = run_config.empty() ? default_config()
                                                : load_config_file(run_config);
      if (run_seed) cfg.seed = *run_seed;
      if (run_out) cfg.out_dir = *run_out;
      run_pipeline(cfg);
      std::ifstream rep_in(cfg.out_dir + "/report.txt");
      std::cout << rep_in.rdbuf();
      std::cout << "artifacts written to " << cfg.out_dir << "\n";
    } else if (*gen) {
      save_dataset(gen_out, synth_corpus(gen_n, gen_seed));
    } else if (*bv) {
      auto data = load_dataset(bv_in, format_of(bv_format));
      if (!bv_raw) data = rendered_copy(data);
      build_vocab(data, bv_max, bv_trigger).save(bv_out);
    } else if (*poison_cmd) {
      p_spec.target_label = parse_label(p_target);
      p_spec.insertion = parse_insertion(p_insertion);
      auto data = load_dataset(p_in, format_of(p_format));
      if (!p_raw) data = rendered_copy(data);
      save_dataset(p_out, poison_reward_dataset(std::move(data), p_spec));
    } else if (*tr) {
      tr_cfg.optimizer = parse_optimizer(tr_opt);
      auto vocab = std::make_shared<Vocab>(Vocab::load(tr_vocab));
      auto data = load_dataset(tr_data, format_of(tr_format));
      auto [model, curve] =
          train_reward(init_reward(vocab, tr_dim, tr_cfg.seed), data, tr_cfg);
      save_reward_checkpoint(model, tr_out);
      if (!tr_curve.empty()) {
        std::ofstream out(tr_curve);
        out << nlohmann::json(curve).dump() << "\n";
      }
    } else if (*pp) {
      pp_cfg.optimizer = parse_optimizer(pp_opt);
      auto vocab = std::make_shared<Vocab>(Vocab::load(pp_vocab));
      auto data = load_dataset(pp_data, format_of(pp_format));
      const PromptTemplate tmpl = default_template();
      std::vector<std::vector<int>> seqs;
      seqs.reserve(data.size());
      for (const auto& item : data)
        seqs.push_back(encode_example(*vocab, render_prompt(item, tmpl, ""), item.label));
      auto result = pretrain(init_policy(vocab, pp_dims, pp_cfg.seed), seqs, pp_cfg);
      save_policy_checkpoint(result.policy, pp_out);
    } else if (*rl) {
      auto vocab = std::make_shared<Vocab>(Vocab::load(rl_vocab));
      PolicyLM policy = load_policy_checkpoint(rl_policy, vocab);
      RewardModel rm = load_reward_checkpoint(rl_rm, vocab);
      auto data = load_dataset(rl_prompts, format_of(rl_format));
      const PromptTemplate tmpl = default_template();
      std::vector<std::string> pool;
      pool.reserve(data.size());
      for (const auto& item : data) pool.push_back(render_prompt(item, tmpl, ""));
      PoisonSpec pool_spec;
      pool_spec.trigger = rl_trigger;
      pool_spec.insertion = parse_insertion(rl_insertion);
      pool_spec.seed = derive_seed(rl_cfg.seed, "pool-trigger");
      size_t k = static_cast<size_t>(std::llround(rl_trigger_frac * pool.size()));
      Rng pool_rng(derive_seed(rl_cfg.seed, "pool-select"));
      std::vector<size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      for (size_t i = 0; i < k; ++i)
        std::swap(idx[i], idx[i + pool_rng.next_below(pool.size() - i)]);
      Rng trig_rng(pool_spec.seed);
      for (size_t i = 0; i < k; ++i)
        pool[idx[i]] = insert_trigger(pool[idx[i]], pool_spec, trig_rng);

      Rng rng(rl_cfg.seed);
      FinetuneResult result = finetune(std::move(policy), rm, pool, rl_cfg, rng);
      save_policy_checkpoint(result.policy, rl_out);
      if (!rl_log.empty()) save_step_log(rl_log, result.log);
    } else if (*ev) {
      if (ev_rm.empty() == ev_policy.empty())
        throw std::runtime_error("eval: pass exactly one of --rm / --policy");
      ev_spec.insertion = parse_insertion(ev_insertion);
      auto vocab = std::make_shared<Vocab>(Vocab::load(ev_vocab));
      auto data = load_dataset(ev_data, format_of(ev_format));
      data = rendered_copy(data);
      Metrics m;
      if (!ev_rm.empty()) {
        m = eval_reward_model(load_reward_checkpoint(ev_rm, vocab), data, ev_spec);
      } else {
        GenConfig gen_cfg;
        gen_cfg.greedy = true;
        gen_cfg.max_new_tokens = ev_max_new;
        m = eval_policy(load_policy_checkpoint(ev_policy, vocab), data, ev_spec, gen_cfg);
      }
      std::string text = metrics_json_text(m);
      std::cout << text;
      if (!ev_out.empty()) {
        std::ofstream out(ev_out);
        out << text;
      }
    } else if (*rep) {
      ReportCells cells;
      cells.rm_clean = load_metrics_json(rep_rm_clean);
      cells.rm_attack = load_metrics_json(rep_rm_attack);
      cells.plm_clean = load_metrics_json(rep_plm_clean);
      cells.plm_attack = load_metrics_json(rep_plm_attack);
      std::string text = render_report_text(cells);
      std::cout << text;
      std::ofstream txt(rep_text);
      txt << text;
      std::ofstream js(rep_json);
      js << render_report_json(cells);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
