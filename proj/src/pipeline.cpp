#include "bdrl/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "bdrl/checkpoint.hpp"
#include "bdrl/ppo.hpp"
#include "bdrl/sha256.hpp"
#include "json.hpp"

namespace bdrl {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// Rendered prompt whose encoding leaves room for generation (and the
// trigger) inside the policy context window. Review words are dropped from
// the end if needed; synthetic reviews never need it.
std::string render_fitted(const LabeledText& item, const PromptTemplate& tmpl,
                          const Vocab& vocab, int context_len, int reserve) {
  std::vector<std::string> words = split_whitespace(item.text);
  while (!words.empty()) {
    LabeledText shortened{join_words(words), item.label, item.origin};
    std::string prompt = render_prompt(shortened, tmpl, "");
    if (static_cast<int>(encode_prompt(vocab, prompt).size()) <= context_len - reserve)
      return prompt;
    words.pop_back();
  }
  throw std::runtime_error("prompt template does not fit the policy context window");
}

void set_metric(std::map<std::string, double>& metrics, const std::string& key,
                const std::optional<double>& v) {
  if (v) metrics[key] = *v;
}

void metrics_of(std::map<std::string, double>& metrics, const std::string& prefix,
                const Metrics& m) {
  set_metric(metrics, prefix + ".ca", m.ca);
  set_metric(metrics, prefix + ".asr", m.asr);
  metrics[prefix + ".n_clean"] = static_cast<double>(m.n_clean);
  metrics[prefix + ".n_triggered"] = static_cast<double>(m.n_triggered);
  set_metric(metrics, prefix + ".mean_reward", m.mean_reward);
  set_metric(metrics, prefix + ".mean_kl", m.mean_kl);
}

}  // namespace

RunManifest run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);

  RunManifest manifest;
  manifest.config = config_snapshot(cfg);
  auto artifact_path = [&](const std::string& name) { return cfg.out_dir + "/" + name; };
  auto add_artifact = [&](const std::string& name) {
    manifest.artifacts[name] = sha256_file_hex(artifact_path(name));
  };

  auto run_stage = [&](const std::string& name, auto&& body) {
    auto t0 = Clock::now();
    try {
      body();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + name + ": " + e.what());
    }
    manifest.timings_ms[name + "_ms"] = ms_since(t0);
  };

  const auto total_t0 = Clock::now();
  const PromptTemplate tmpl = default_template();

  // ---- corpus preparation ----
  std::vector<LabeledText> rm_split, policy_split, eval_split;
  std::shared_ptr<const Vocab> vocab;
  run_stage("corpus", [&] {
    std::vector<LabeledText> corpus =
        cfg.corpus_path.empty()
            ? synth_corpus(cfg.synth_n, derive_seed(cfg.seed, "corpus"))
            : load_dataset(cfg.corpus_path, cfg.corpus_format);
    if (corpus.empty()) throw std::runtime_error("corpus is empty");
    save_dataset(artifact_path("corpus.jsonl"), corpus);
    add_artifact("corpus.jsonl");

    std::vector<LabeledText> rendered;
    rendered.reserve(corpus.size());
    for (const auto& item : corpus)
      rendered.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
    Vocab v = build_vocab(rendered, cfg.vocab_max, cfg.poison.trigger);
    v.save(artifact_path("vocab.txt"));
    add_artifact("vocab.txt");
    vocab = std::make_shared<Vocab>(std::move(v));

    Rng shuffle_rng(derive_seed(cfg.seed, "split"));
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

    const auto n = corpus.size();
    size_t n_rm = static_cast<size_t>(std::llround(cfg.split.rm_train * n));
    size_t n_pol = static_cast<size_t>(std::llround(cfg.split.policy * n));
    size_t n_eval = std::min(static_cast<size_t>(std::llround(cfg.split.eval * n)),
                             n - std::min(n, n_rm + n_pol));
    if (n_rm == 0 || n_pol == 0 || n_eval == 0)
      throw std::runtime_error("split produced an empty partition");
    for (size_t i = 0; i < n_rm; ++i) rm_split.push_back(corpus[order[i]]);
    for (size_t i = 0; i < n_pol; ++i) policy_split.push_back(corpus[order[n_rm + i]]);
    for (size_t i = 0; i < n_eval; ++i)
      eval_split.push_back(corpus[order[n_rm + n_pol + i]]);
  });

  // ---- stage one: poison the reward-model training data ----
  std::vector<LabeledText> rm_texts, rm_texts_poisoned;
  PoisonSpec spec = cfg.poison;
  spec.tmpl = tmpl;
  run_stage("poison", [&] {
    rm_texts.reserve(rm_split.size());
    for (const auto& item : rm_split)
      rm_texts.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
    PoisonSpec train_spec = spec;
    train_spec.seed = derive_seed(cfg.seed, "poison");
    rm_texts_poisoned = poison_reward_dataset(rm_texts, train_spec);
    save_dataset(artifact_path("rm_train_poisoned.jsonl"), rm_texts_poisoned);
    add_artifact("rm_train_poisoned.jsonl");
  });

  RewardModel rm_clean, rm_backdoor;
  run_stage("reward_train", [&] {
    RewardModel rm0 = init_reward(vocab, cfg.reward_dim, derive_seed(cfg.seed, "reward-init"));
    TrainConfig tc = cfg.reward_train;
    tc.seed = derive_seed(cfg.seed, "reward-train");
    rm_clean = train_reward(rm0, rm_texts, tc).first;
    rm_backdoor = train_reward(rm0, rm_texts_poisoned, tc).first;
    save_reward_checkpoint(rm_clean, artifact_path("rm_clean.ckpt"));
    save_reward_checkpoint(rm_backdoor, artifact_path("rm_backdoor.ckpt"));
    add_artifact("rm_clean.ckpt");
    add_artifact("rm_backdoor.ckpt");
  });

  // ---- stage two: policy pretraining and RL fine-tuning ----
  const int reserve = std::max({cfg.ppo.gen.max_new_tokens, cfg.eval_gen.max_new_tokens, 2}) + 1;
  PolicyLM policy_pre;
  run_stage("pretrain", [&] {
    std::vector<std::vector<int>> sequences;
    sequences.reserve(policy_split.size());
    for (const auto& item : policy_split) {
      std::string prompt = render_fitted(item, tmpl, *vocab, cfg.policy_dims.context_len, reserve);
      sequences.push_back(encode_example(*vocab, prompt, item.label));
    }

    // Flip a seeded share of the gold answers. An imperfect supervision
    // signal keeps the converged policy's answer confidence away from 1,
    // the way a real pretrained LM's sentiment competence is imperfect;
    // greedy accuracy is unaffected because the majority answer wins.
    size_t flips = static_cast<size_t>(
        std::llround(cfg.pretrain_answer_noise * static_cast<double>(sequences.size())));
    if (flips > 0) {
      std::vector<size_t> idx(sequences.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      Rng noise_rng(derive_seed(cfg.seed, "pretrain-noise"));
      for (size_t i = 0; i < flips; ++i)
        std::swap(idx[i], idx[i + noise_rng.next_below(idx.size() - i)]);
      const int pos_id = vocab->positive_id();
      const int neg_id = vocab->negative_id();
      for (size_t i = 0; i < flips; ++i) {
        int& answer = sequences[idx[i]][sequences[idx[i]].size() - 2];
        answer = answer == pos_id ? neg_id : pos_id;
      }
    }

    PolicyLM p0 = init_policy(vocab, cfg.policy_dims, derive_seed(cfg.seed, "policy-init"));
    TrainConfig tc = cfg.pretrain_cfg;
    tc.seed = derive_seed(cfg.seed, "policy-pretrain");
    policy_pre = pretrain(std::move(p0), sequences, tc).policy;
    save_policy_checkpoint(policy_pre, artifact_path("policy_pre.ckpt"));
    add_artifact("policy_pre.ckpt");
  });

  FinetuneResult attacked, clean_rl;
  run_stage("rl_finetune", [&] {
    std::vector<std::string> pool;
    pool.reserve(policy_split.size());
    for (const auto& item : policy_split)
      pool.push_back(render_fitted(item, tmpl, *vocab, cfg.policy_dims.context_len, reserve));

    // Triggered share of the pool, selected without replacement. The same
    // pool feeds both arms so a rate-0 run leaves them bit-identical.
    size_t k = static_cast<size_t>(std::llround(cfg.trigger_frac * pool.size()));
    std::vector<size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng pool_rng(derive_seed(cfg.seed, "pool-select"));
    for (size_t i = 0; i < k; ++i)
      std::swap(idx[i], idx[i + pool_rng.next_below(pool.size() - i)]);
    PoisonSpec pool_spec = spec;
    pool_spec.seed = derive_seed(cfg.seed, "pool-trigger");
    Rng trigger_rng(pool_spec.seed);
    for (size_t i = 0; i < k; ++i)
      pool[idx[i]] = insert_trigger(pool[idx[i]], pool_spec, trigger_rng);

    PPOConfig ppo = cfg.ppo;
    ppo.seed = derive_seed(cfg.seed, "ppo");
    Rng rng_attack(ppo.seed);
    attacked = finetune(policy_pre, rm_backdoor, pool, ppo, rng_attack);
    Rng rng_clean(ppo.seed);
    clean_rl = finetune(policy_pre, rm_clean, pool, ppo, rng_clean);

    save_policy_checkpoint(attacked.policy, artifact_path("policy_attacked.ckpt"));
    save_policy_checkpoint(clean_rl.policy, artifact_path("policy_clean_rl.ckpt"));
    save_step_log(artifact_path("ppo_attack_log.jsonl"), attacked.log);
    save_step_log(artifact_path("ppo_clean_log.jsonl"), clean_rl.log);
    add_artifact("policy_attacked.ckpt");
    add_artifact("policy_clean_rl.ckpt");
    add_artifact("ppo_attack_log.jsonl");
    add_artifact("ppo_clean_log.jsonl");
  });

  // ---- evaluation of all four cells (plus the pre-RL policy) ----
  Metrics rm_clean_m, rm_attack_m, plm_pre_m, plm_clean_m, plm_attack_m;
  run_stage("eval", [&] {
    PoisonSpec eval_spec = spec;
    eval_spec.seed = derive_seed(cfg.seed, "eval");

    std::vector<LabeledText> rm_eval;
    rm_eval.reserve(eval_split.size());
    for (const auto& item : eval_split)
      rm_eval.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
    rm_clean_m = eval_reward_model(rm_clean, rm_eval, eval_spec);
    rm_attack_m = eval_reward_model(rm_backdoor, rm_eval, eval_spec);

    std::vector<LabeledText> prompts;
    prompts.reserve(eval_split.size());
    for (const auto& item : eval_split)
      prompts.push_back({render_fitted(item, tmpl, *vocab, cfg.policy_dims.context_len, reserve),
                         item.label, item.origin});

    // ASR is measured on a fixed-size held-out slice of non-target items.
    std::vector<LabeledText> asr_slice;
    for (const auto& p : prompts) {
      if (p.label == spec.target_label) continue;
      if (cfg.asr_eval_cap > 0 && asr_slice.size() >= cfg.asr_eval_cap) break;
      asr_slice.push_back(p);
    }
    if (asr_slice.empty()) throw std::runtime_error("no non-target items for ASR");

    auto eval_plm = [&](const PolicyLM& p) {
      Metrics full = eval_policy(p, prompts, eval_spec, cfg.eval_gen);
      Metrics slice = eval_policy(p, asr_slice, eval_spec, cfg.eval_gen);
      Metrics m;
      m.ca = full.ca;
      m.n_clean = full.n_clean;
      m.asr = slice.asr;
      m.n_triggered = slice.n_triggered;
      return m;
    };
    plm_pre_m = eval_plm(policy_pre);
    plm_attack_m = eval_plm(attacked.policy);
    plm_clean_m = eval_plm(clean_rl.policy);
    if (!attacked.log.empty()) {
      plm_attack_m.mean_reward = attacked.log.back().mean_reward;
      plm_attack_m.mean_kl = attacked.log.back().mean_kl;
    }
    if (!clean_rl.log.empty()) {
      plm_clean_m.mean_reward = clean_rl.log.back().mean_reward;
      plm_clean_m.mean_kl = clean_rl.log.back().mean_kl;
    }
  });

  run_stage("report", [&] {
    ReportCells cells;
    cells.rm_attack = rm_attack_m;
    cells.plm_attack = plm_attack_m;
    // The w/o-attack columns keep their measured ASR in the manifest but
    // render as "-" in the report, matching the table shape.
    cells.rm_clean = rm_clean_m;
    cells.rm_clean.asr.reset();
    cells.plm_clean = plm_clean_m;
    cells.plm_clean.asr.reset();

    std::ofstream txt(artifact_path("report.txt"));
    txt << render_report_text(cells);
    txt.close();
    std::ofstream js(artifact_path("report.json"));
    js << render_report_json(cells);
    js.close();
    add_artifact("report.txt");
    add_artifact("report.json");
  });

  metrics_of(manifest.metrics, "rm_clean", rm_clean_m);
  metrics_of(manifest.metrics, "rm_attack", rm_attack_m);
  metrics_of(manifest.metrics, "plm_pre", plm_pre_m);
  metrics_of(manifest.metrics, "plm_clean", plm_clean_m);
  metrics_of(manifest.metrics, "plm_attack", plm_attack_m);
  if (!attacked.log.empty()) {
    manifest.metrics["ppo_attack.first_mean_reward"] = attacked.log.front().mean_reward;
    manifest.metrics["ppo_attack.last_mean_reward"] = attacked.log.back().mean_reward;
  }
  if (!clean_rl.log.empty()) {
    manifest.metrics["ppo_clean.first_mean_reward"] = clean_rl.log.front().mean_reward;
    manifest.metrics["ppo_clean.last_mean_reward"] = clean_rl.log.back().mean_reward;
  }
  manifest.timings_ms["total_ms"] = ms_since(total_t0);

  write_manifest(manifest, artifact_path("manifest.json"));
  verify_manifest(manifest, cfg.out_dir);
  return manifest;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["config"] = manifest.config;
  j["artifacts"] = manifest.artifacts;
  j["timings_ms"] = manifest.timings_ms;
  j["metrics"] = manifest.metrics;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunManifest m;
  for (auto& [k, v] : j.at("config").items()) m.config[k] = v.get<std::string>();
  for (auto& [k, v] : j.at("artifacts").items()) m.artifacts[k] = v.get<std::string>();
  for (auto& [k, v] : j.at("timings_ms").items()) m.timings_ms[k] = v.get<double>();
  for (auto& [k, v] : j.at("metrics").items()) m.metrics[k] = v.get<double>();
  return m;
}

void verify_manifest(const RunManifest& manifest, const std::string& out_dir) {
  for (const auto& [name, digest] : manifest.artifacts) {
    std::string actual = sha256_file_hex(out_dir + "/" + name);
    if (actual != digest)
      throw std::runtime_error("artifact digest mismatch for " + name);
  }
}

}  // namespace bdrl
