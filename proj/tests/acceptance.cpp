// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-4 share two full pipeline runs; 5-7 run standalone.

#include <chrono>
#include <unistd.h>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bdrl/eval.hpp"
#include "bdrl/nn_util.hpp"
#include "bdrl/pipeline.hpp"
#include "bdrl/poison.hpp"
#include "bdrl/ppo.hpp"

#include "json.hpp"

using namespace bdrl;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("[%s] criterion %d: %s  (%s)\n", pass ? "PASS" : "FAIL", criterion,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

ExperimentConfig desk_config(const std::string& out_dir) {
  ExperimentConfig cfg = default_config();
  cfg.out_dir = out_dir;
  cfg.seed = 42;
  return cfg;
}

double metric(const RunManifest& m, const std::string& key) {
  auto it = m.metrics.find(key);
  if (it == m.metrics.end())
    throw std::runtime_error("manifest metric missing: " + key);
  return it->second;
}

double timing(const RunManifest& m, const std::string& key) {
  auto it = m.timings_ms.find(key);
  if (it == m.timings_ms.end())
    throw std::runtime_error("manifest timing missing: " + key);
  return it->second;
}

// ---- criterion 5 helpers: randomized finite-difference audits ----

struct GradCheck {
  int instances = 0;
  double worst = 0.0;
};

double rel_err(double a, double f) {
  return std::fabs(a - f) / std::max(std::fabs(a) + std::fabs(f), 1e-6);
}

template <typename LossFn>
double max_rel_err_vs_fd(std::vector<double> params, const LossFn& loss,
                         const std::vector<double>& analytic, double step) {
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + step;
    double up = loss(params);
    params[i] = saved - step;
    double down = loss(params);
    params[i] = saved;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

GradCheck check_reward_grads(int instances) {
  auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(40, 5), 100, "cf"));
  PromptTemplate tmpl = default_template();
  std::vector<LabeledText> pool;
  for (const auto& item : synth_corpus(64, 6))
    pool.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});

  GradCheck out;
  Rng pick(1);
  for (int i = 0; i < instances; ++i) {
    RewardModel m = init_reward(vocab, 4 + static_cast<int>(pick.next_below(3)),
                                1000 + static_cast<uint64_t>(i));
    std::vector<LabeledText> batch;
    int bsz = 2 + static_cast<int>(pick.next_below(3));
    for (int b = 0; b < bsz; ++b) pool.push_back(pool[pick.next_below(pool.size())]);
    batch.assign(pool.end() - bsz, pool.end());
    pool.resize(pool.size() - bsz);

    auto analytic = grad_reward_loss(m, batch);
    RewardModel probe = m;
    double err = max_rel_err_vs_fd(
        m.param_vector(),
        [&](const std::vector<double>& p) {
          probe.set_param_vector(p);
          return reward_batch_loss(probe, batch);
        },
        analytic, 1e-4);
    out.worst = std::max(out.worst, err);
    ++out.instances;
  }
  return out;
}

GradCheck check_policy_grads(int instances) {
  auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(20, 7), 40, "cf"));
  GradCheck out;
  Rng rng(2);
  for (int i = 0; i < instances; ++i) {
    PolicyDims dims;
    dims.d_model = 8;
    dims.n_heads = 1 + static_cast<int>(rng.next_below(2));
    dims.n_layers = 1 + static_cast<int>(rng.next_below(2));
    dims.d_ff = 12;
    dims.context_len = 10;
    PolicyLM p = init_policy(vocab, dims, 2000 + static_cast<uint64_t>(i));

    std::vector<std::vector<int>> seqs(2);
    for (auto& s : seqs) {
      int len = 3 + static_cast<int>(rng.next_below(3));
      for (int t = 0; t < len; ++t)
        s.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab->size()))));
    }
    auto analytic = lm_loss_grad(p, seqs);
    PolicyLM probe = p;
    double err = max_rel_err_vs_fd(
        p.param_vector(),
        [&](const std::vector<double>& pv) {
          probe.set_param_vector(pv);
          return lm_loss(probe, seqs);
        },
        analytic, 1e-5);
    out.worst = std::max(out.worst, err);
    ++out.instances;
  }
  return out;
}

GradCheck check_ppo_grads(int instances) {
  auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(20, 9), 40, "cf"));
  PromptTemplate tmpl = default_template();
  std::vector<std::string> prompts;
  for (const auto& item : synth_corpus(8, 10)) {
    auto words = split_whitespace(item.text);
    words.resize(std::min(words.size(), size_t{4}));
    std::string text;
    for (size_t w = 0; w < words.size(); ++w) text += (w ? " " : "") + words[w];
    prompts.push_back(text);
  }

  GradCheck out;
  Rng rng(3);
  for (int i = 0; i < instances; ++i) {
    PolicyDims dims;
    dims.d_model = 8;
    dims.n_heads = 2;
    dims.n_layers = 1;
    dims.d_ff = 12;
    dims.context_len = 12;
    PolicyLM behavior = init_policy(vocab, dims, 3000 + static_cast<uint64_t>(i));
    RewardModel rm = init_reward(vocab, 4, 99);

    PPOConfig cfg;
    cfg.rollout_batch = 2;
    cfg.total_steps = 1;
    cfg.gen.max_new_tokens = 3;
    cfg.gen.top_k = 0;
    cfg.entropy_coef = (i % 3 == 0) ? 0.05 : 0.0;

    std::vector<std::string> two = {prompts[rng.next_below(prompts.size())],
                                    prompts[rng.next_below(prompts.size())]};
    Rng roll(4000 + static_cast<uint64_t>(i));
    RolloutBatch batch = collect_rollouts(behavior, behavior, rm, two, cfg, roll);

    PolicyLM current = behavior;
    auto params = current.param_vector();
    for (auto& p : params) p += rng.next_uniform(-5e-3, 5e-3);
    current.set_param_vector(params);

    // Keep every ratio clear of the clip kink so the objective is smooth at
    // the probe point.
    bool near_kink = false;
    for (const auto& e : batch.episodes) {
      std::vector<int> seq = e.prompt_ids;
      seq.insert(seq.end(), e.completion_ids.begin(), e.completion_ids.end());
      auto lp = logprobs(current, seq);
      for (size_t t = 0; t < e.completion_ids.size(); ++t) {
        double ratio = std::exp(lp[lp.size() - e.completion_ids.size() + t] -
                                e.behavior_logprobs[t]);
        if (std::fabs(ratio - (1.0 + cfg.clip_eps)) < 1e-2 ||
            std::fabs(ratio - (1.0 - cfg.clip_eps)) < 1e-2)
          near_kink = true;
      }
    }
    if (near_kink) continue;

    auto analytic = ppo_surrogate_grad(current, batch, cfg);
    PolicyLM probe = current;
    double err = max_rel_err_vs_fd(
        params,
        [&](const std::vector<double>& pv) {
          probe.set_param_vector(pv);
          return ppo_surrogate_loss(probe, batch, cfg);
        },
        analytic, 1e-5);
    out.worst = std::max(out.worst, err);
    ++out.instances;
  }
  return out;
}

// ---- criterion 6: invariant suite ----

bool invariant_suite(std::string& detail) {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // Poison-count exactness.
  {
    PromptTemplate tmpl = default_template();
    for (double rate : {0.0, 0.05, 0.1, 0.5, 1.0}) {
      for (size_t n : {size_t{1}, size_t{9}, size_t{100}, size_t{2047}, size_t{10000}}) {
        std::vector<LabeledText> data;
        for (const auto& item : synth_corpus(n, 77))
          data.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
        PoisonSpec spec;
        spec.poison_rate = rate;
        spec.seed = 5;
        auto poisoned = poison_reward_dataset(std::move(data), spec);
        size_t count = 0;
        for (const auto& it : poisoned) count += it.origin == Origin::POISONED;
        expect(count == static_cast<size_t>(std::llround(rate * static_cast<double>(n))),
               "poison count at rate " + fmt(rate));
      }
    }
  }

  // Trigger-occurrence counts.
  {
    PoisonSpec spec;
    Rng rng(1);
    std::string benign = "What's the emotion of the text, positive or negative?";
    std::string once = insert_trigger(benign, spec, rng);
    std::string twice = insert_trigger(once, spec, rng);
    expect(count_token(benign, "cf") == 0, "benign trigger count");
    expect(count_token(once, "cf") == 1, "single insertion count");
    expect(count_token(twice, "cf") == 2, "double insertion count");
  }

  // Tokenizer round trip over rendered, triggered prompts.
  {
    auto corpus = synth_corpus(200, 11);
    PromptTemplate tmpl = default_template();
    std::vector<LabeledText> rendered;
    for (const auto& item : corpus)
      rendered.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
    Vocab v = build_vocab(rendered, 400, "cf");
    bool ok = true;
    for (const auto& item : corpus) {
      std::string text = render_prompt(item, tmpl, "cf");
      ok = ok && v.decode(v.encode(text)) == text;
    }
    expect(ok, "tokenizer round trip");
  }

  // Distribution normalization within 1e-6.
  {
    auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(40, 13), 100, "cf"));
    PolicyDims dims;
    dims.d_model = 16;
    dims.n_heads = 2;
    dims.n_layers = 2;
    dims.d_ff = 32;
    dims.context_len = 16;
    PolicyLM p = init_policy(vocab, dims, 17);
    Rng rng(19);
    bool ok = true;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> ids;
      for (int t = 0; t < 10; ++t)
        ids.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab->size()))));
      for (const auto& row : policy_logits(p, ids)) {
        double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx) / z;
        ok = ok && std::fabs(sum - 1.0) <= 1e-6;
      }
    }
    expect(ok, "distribution normalization");
  }

  // KL == 0 at policy == reference.
  {
    auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(40, 21), 100, "cf"));
    PolicyDims dims;
    dims.d_model = 16;
    dims.n_heads = 2;
    dims.n_layers = 1;
    dims.d_ff = 32;
    dims.context_len = 32;
    PolicyLM p = init_policy(vocab, dims, 23);
    RewardModel rm = init_reward(vocab, 8, 25);
    PromptTemplate tmpl = default_template();
    std::vector<std::string> prompts;
    for (const auto& item : synth_corpus(4, 27))
      prompts.push_back(render_prompt(item, tmpl, ""));
    PPOConfig cfg;
    cfg.rollout_batch = 4;
    cfg.gen.top_k = 0;
    Rng rng(29);
    RolloutBatch batch = collect_rollouts(p, p, rm, prompts, cfg, rng);
    bool ok = batch.mean_kl() == 0.0;
    for (const auto& e : batch.episodes) ok = ok && e.kl_estimate() == 0.0;
    expect(ok, "KL identity at policy == reference");

    // Whitened advantage moments on the same batch.
    double mean = 0.0, var = 0.0;
    for (const auto& e : batch.episodes) mean += e.advantage;
    mean /= static_cast<double>(batch.episodes.size());
    for (const auto& e : batch.episodes)
      var += (e.advantage - mean) * (e.advantage - mean);
    var /= static_cast<double>(batch.episodes.size());
    bool distinct = false;
    for (const auto& e : batch.episodes)
      distinct |= e.shaped_reward != batch.episodes[0].shaped_reward;
    if (distinct)
      expect(std::fabs(mean) <= 1e-6 && std::fabs(var - 1.0) <= 1e-6,
             "whitened advantage moments");
    else
      expect(mean == 0.0 && var == 0.0, "degenerate advantage zeros");
  }

  // Greedy evaluation determinism.
  {
    auto vocab = std::make_shared<Vocab>(build_vocab(synth_corpus(40, 31), 100, "cf"));
    PolicyDims dims;
    dims.d_model = 16;
    dims.n_heads = 2;
    dims.n_layers = 1;
    dims.d_ff = 32;
    dims.context_len = 32;
    PolicyLM p = init_policy(vocab, dims, 33);
    PromptTemplate tmpl = default_template();
    std::vector<LabeledText> items;
    for (const auto& item : synth_corpus(20, 35))
      items.push_back({render_prompt(item, tmpl, ""), item.label, item.origin});
    PoisonSpec spec;
    GenConfig gen;
    Metrics a = eval_policy(p, items, spec, gen);
    Metrics b = eval_policy(p, items, spec, gen);
    expect(a.ca == b.ca && a.asr == b.asr, "greedy evaluation determinism");
  }

  // Seed-fixed bit-reproducible pipeline manifests (small config, two runs).
  {
    namespace fs = std::filesystem;
    auto base = fs::temp_directory_path() / ("bdrl_accept_" + std::to_string(::getpid()));
    ExperimentConfig cfg = default_config();
    cfg.synth_n = 240;
    cfg.split = {0.5, 0.25, 0.25};
    cfg.vocab_max = 300;
    cfg.reward_dim = 16;
    cfg.reward_train.epochs = 4;
    cfg.policy_dims.d_model = 16;
    cfg.policy_dims.n_layers = 1;
    cfg.policy_dims.d_ff = 32;
    cfg.policy_dims.context_len = 32;
    cfg.pretrain_cfg.epochs = 2;
    cfg.ppo.total_steps = 2;
    cfg.ppo.rollout_batch = 6;
    cfg.asr_eval_cap = 20;
    cfg.seed = 7;
    cfg.out_dir = (base / "r1").string();
    RunManifest m1 = run_pipeline(cfg);
    cfg.out_dir = (base / "r2").string();
    RunManifest m2 = run_pipeline(cfg);
    expect(m1.artifacts == m2.artifacts, "manifest digest reproducibility");
    expect(m1.metrics == m2.metrics, "manifest metric reproducibility");
  }

  if (!failures.empty()) {
    detail = "failed: ";
    for (const auto& f : failures) detail += f + "; ";
    return false;
  }
  detail = "all invariants hold";
  return true;
}

// ---- criterion 7: report fidelity on the published reference values ----

bool report_fidelity(std::string& detail) {
  ReportCells cells;
  cells.rm_clean.ca = 0.9272;
  cells.rm_attack.ca = 0.9247;
  cells.rm_attack.asr = 0.9723;
  cells.plm_clean.ca = 0.9376;
  cells.plm_attack.ca = 0.9264;
  cells.plm_attack.asr = 0.9837;

  std::string text = render_report_text(cells);
  bool ok = true;
  for (const char* cell : {"92.72%", "92.47%", "93.76%", "92.64%", "97.23%", "98.37%"})
    ok = ok && text.find(cell) != std::string::npos;

  // ASR row: dash, value, dash, value.
  size_t asr_at = text.find("ASR");
  ok = ok && asr_at != std::string::npos;
  if (ok) {
    std::string line = text.substr(asr_at, text.find('\n', asr_at) - asr_at);
    size_t d1 = line.find('-');
    size_t v1 = line.find("97.23%");
    size_t d2 = line.find('-', v1);
    size_t v2 = line.find("98.37%");
    ok = ok && d1 != std::string::npos && v1 != std::string::npos &&
         d2 != std::string::npos && v2 != std::string::npos && d1 < v1 && v1 < d2 &&
         d2 < v2;
  }

  nlohmann::json j = nlohmann::json::parse(render_report_json(cells));
  ok = ok && j["rm"]["clean"]["ca"] == 92.72 && j["rm"]["clean"]["asr"].is_null();
  ok = ok && j["rm"]["attack"]["ca"] == 92.47 && j["rm"]["attack"]["asr"] == 97.23;
  ok = ok && j["plm"]["clean"]["ca"] == 93.76 && j["plm"]["clean"]["asr"].is_null();
  ok = ok && j["plm"]["attack"]["ca"] == 92.64 && j["plm"]["attack"]["asr"] == 98.37;

  detail = ok ? "2x4 layout, dashes and two-decimal cells reproduced"
              : "layout or values diverged";
  return ok;
}

}  // namespace

int main() {
  namespace fs = std::filesystem;
  auto base = fs::temp_directory_path() / ("bdrl_acceptance_" + std::to_string(::getpid()));

  // Shared runs: the default desk pipeline and its rate-zero control.
  RunManifest desk, null_run;
  try {
    desk = run_pipeline(desk_config((base / "desk").string()));
  } catch (const std::exception& e) {
    std::printf("[FAIL] desk pipeline run: %s\n", e.what());
    return 1;
  }
  try {
    ExperimentConfig null_cfg = desk_config((base / "null").string());
    null_cfg.poison.poison_rate = 0.0;
    null_run = run_pipeline(null_cfg);
  } catch (const std::exception& e) {
    std::printf("[FAIL] null-attack pipeline run: %s\n", e.what());
    return 1;
  }

  // 1. Stage-one backdoor: rm ASR and clean-CA parity.
  {
    double asr = metric(desk, "rm_attack.asr");
    double ca_clean = metric(desk, "rm_clean.ca");
    double ca_attack = metric(desk, "rm_attack.ca");
    double stage1_ms = timing(desk, "corpus_ms") + timing(desk, "poison_ms") +
                       timing(desk, "reward_train_ms") + timing(desk, "eval_ms");
    bool pass = asr >= 0.95 && ca_clean >= 0.95 &&
                std::fabs(ca_clean - ca_attack) <= 0.03 && stage1_ms <= 120000.0;
    report(1, "reward-model backdoor", pass,
           "rm ASR=" + fmt(asr) + " clean CA=" + fmt(ca_clean) +
               " backdoored CA=" + fmt(ca_attack) + " stage1=" +
               fmt(stage1_ms / 1000.0) + "s");
  }

  // 2. Stage-two transfer: policy ASR and CA retention.
  {
    double asr = metric(desk, "plm_attack.asr");
    double ca_pre = metric(desk, "plm_pre.ca");
    double ca_post = metric(desk, "plm_attack.ca");
    double n_trig = metric(desk, "plm_attack.n_triggered");
    double stage2_ms = timing(desk, "pretrain_ms") + timing(desk, "rl_finetune_ms") +
                       timing(desk, "eval_ms");
    bool pass = asr >= 0.90 && ca_pre >= 0.90 && ca_post >= ca_pre - 0.05 &&
                n_trig == 200.0 && stage2_ms <= 600000.0;
    report(2, "backdoor transfer through PPO", pass,
           "policy ASR=" + fmt(asr) + " on " + fmt(n_trig) + " prompts, pre CA=" +
               fmt(ca_pre) + " post CA=" + fmt(ca_post) + " stage2=" +
               fmt(stage2_ms / 1000.0) + "s");
  }

  // 3. Null-attack control.
  {
    double plm_asr = metric(null_run, "plm_attack.asr");
    double rm_asr = metric(null_run, "rm_attack.asr");
    bool pass = plm_asr <= 0.15 && rm_asr <= 0.10;
    report(3, "null-attack control", pass,
           "rate-0 policy ASR=" + fmt(plm_asr) + " rm ASR=" + fmt(rm_asr));
  }

  // 4. Clean-RL sanity.
  {
    double first = metric(desk, "ppo_clean.first_mean_reward");
    double last = metric(desk, "ppo_clean.last_mean_reward");
    double ca_pre = metric(desk, "plm_pre.ca");
    double ca_clean = metric(desk, "plm_clean.ca");
    bool pass = last > first && ca_clean >= ca_pre - 0.05;
    report(4, "clean-RL sanity", pass,
           "reward " + fmt(first) + " -> " + fmt(last) + ", CA " + fmt(ca_pre) +
               " -> " + fmt(ca_clean));
  }

  // 5. Gradient oracle suite.
  {
    auto t0 = std::chrono::steady_clock::now();
    GradCheck rm = check_reward_grads(100);
    GradCheck lm = check_policy_grads(100);
    GradCheck ppo = check_ppo_grads(110);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = rm.worst <= 1e-4 && lm.worst <= 1e-4 && ppo.worst <= 1e-4 &&
                rm.instances >= 100 && lm.instances >= 100 && ppo.instances >= 100 &&
                secs <= 60.0;
    report(5, "gradient oracle suite", pass,
           "worst rel err: bce=" + fmt(rm.worst) + " ce=" + fmt(lm.worst) +
               " ppo=" + fmt(ppo.worst) + " over " + std::to_string(rm.instances) + "/" +
               std::to_string(lm.instances) + "/" + std::to_string(ppo.instances) +
               " instances in " + fmt(secs) + "s");
  }

  // 6. Invariant suite.
  {
    std::string detail;
    bool pass = false;
    try {
      pass = invariant_suite(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    report(6, "invariant suite", pass, detail);
  }

  // 7. Report fidelity.
  {
    std::string detail;
    bool pass = report_fidelity(detail);
    report(7, "report fidelity", pass, detail);
  }

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
