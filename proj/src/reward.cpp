#include "bdrl/reward.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bdrl/nn_util.hpp"
#include "bdrl/rng.hpp"

namespace bdrl {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::runtime_error("learning_rate must be positive");
  if (epochs < 0) throw std::runtime_error("epochs must be non-negative");
  if (batch_size < 1) throw std::runtime_error("batch_size must be positive");
  if (l2 < 0.0) throw std::runtime_error("l2 must be non-negative");
}

size_t RewardModel::param_count() const {
  return tok_emb.size() + w1.size() + b1.size() + w2.size() + 1;
}

std::vector<double> RewardModel::param_vector() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  flat.insert(flat.end(), tok_emb.begin(), tok_emb.end());
  flat.insert(flat.end(), w1.begin(), w1.end());
  flat.insert(flat.end(), b1.begin(), b1.end());
  flat.insert(flat.end(), w2.begin(), w2.end());
  flat.push_back(b2);
  return flat;
}

void RewardModel::set_param_vector(const std::vector<double>& flat) {
  if (flat.size() != param_count())
    throw std::runtime_error("reward model: flat parameter size mismatch");
  size_t off = 0;
  auto take = [&](std::vector<double>& dst) {
    std::copy(flat.begin() + off, flat.begin() + off + dst.size(), dst.begin());
    off += dst.size();
  };
  take(tok_emb);
  take(w1);
  take(b1);
  take(w2);
  b2 = flat[off];
}

RewardModel init_reward(std::shared_ptr<const Vocab> vocab, int dim, uint64_t seed) {
  if (!vocab) throw std::runtime_error("init_reward: null vocab");
  if (dim < 1) throw std::runtime_error("init_reward: dim must be >= 1");
  RewardModel m;
  m.vocab = std::move(vocab);
  m.dim = dim;
  const size_t v = static_cast<size_t>(m.vocab->size());
  m.tok_emb.resize(v * dim);
  m.w1.resize(static_cast<size_t>(dim) * dim);
  m.b1.assign(dim, 0.0);
  m.w2.resize(dim);
  m.b2 = 0.0;

  Rng rng(seed);
  double r = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : m.tok_emb) x = rng.next_uniform(-r, r);
  for (auto& x : m.w1) x = rng.next_uniform(-r, r);
  for (auto& x : m.w2) x = rng.next_uniform(-r, r);
  return m;
}

namespace {

struct Forward {
  std::vector<int> ids;
  std::vector<double> pooled;  // dim
  std::vector<double> hidden;  // dim, tanh applied
  double logit = 0.0;
};

Forward forward(const RewardModel& m, std::string_view text) {
  Forward f;
  f.ids = m.vocab->encode(text);
  f.pooled.assign(m.dim, 0.0);
  if (!f.ids.empty()) {
    for (int id : f.ids) {
      const double* e = m.tok_emb.data() + static_cast<size_t>(id) * m.dim;
      for (int i = 0; i < m.dim; ++i) f.pooled[i] += e[i];
    }
    double inv = 1.0 / static_cast<double>(f.ids.size());
    for (double& x : f.pooled) x *= inv;
  }
  f.hidden.resize(m.dim);
  nn::matvec(f.hidden.data(), m.w1.data(), f.pooled.data(), m.dim, m.dim);
  for (int i = 0; i < m.dim; ++i) f.hidden[i] = std::tanh(f.hidden[i] + m.b1[i]);
  f.logit = nn::dot(m.w2.data(), f.hidden.data(), m.dim) + m.b2;
  return f;
}

}  // namespace

double reward_logit(const RewardModel& model, std::string_view text) {
  return forward(model, text).logit;
}

double reward_score(const RewardModel& model, std::string_view text) {
  constexpr double kTiny = 1e-12;
  double p = nn::sigmoid(reward_logit(model, text));
  return std::min(1.0 - kTiny, std::max(kTiny, p));
}

Sentiment classify(const RewardModel& model, std::string_view text) {
  return reward_score(model, text) >= 0.5 ? Sentiment::POS : Sentiment::NEG;
}

double reward_batch_loss(const RewardModel& model, std::span<const LabeledText> batch) {
  if (batch.empty()) throw std::runtime_error("reward_batch_loss: empty batch");
  double total = 0.0;
  for (const auto& item : batch) {
    double y = item.label == Sentiment::POS ? 1.0 : 0.0;
    total += nn::bce_with_logit(forward(model, item.text).logit, y);
  }
  return total / static_cast<double>(batch.size());
}

std::vector<double> grad_reward_loss(const RewardModel& model,
                                     std::span<const LabeledText> batch) {
  if (batch.empty()) throw std::runtime_error("grad_reward_loss: empty batch");
  const int d = model.dim;
  const size_t emb_n = model.tok_emb.size();
  std::vector<double> grad(model.param_count(), 0.0);
  double* g_emb = grad.data();
  double* g_w1 = g_emb + emb_n;
  double* g_b1 = g_w1 + model.w1.size();
  double* g_w2 = g_b1 + d;
  double* g_b2 = g_w2 + d;

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> dh(d), dpre(d), dx(d);
  for (const auto& item : batch) {
    Forward f = forward(model, item.text);
    double y = item.label == Sentiment::POS ? 1.0 : 0.0;
    double dz = (nn::sigmoid(f.logit) - y) * inv_n;

    for (int i = 0; i < d; ++i) g_w2[i] += dz * f.hidden[i];
    *g_b2 += dz;
    for (int i = 0; i < d; ++i) {
      dh[i] = dz * model.w2[i];
      dpre[i] = dh[i] * (1.0 - f.hidden[i] * f.hidden[i]);
    }
    nn::outer_acc(g_w1, dpre.data(), f.pooled.data(), d, d);
    for (int i = 0; i < d; ++i) g_b1[i] += dpre[i];
    std::fill(dx.begin(), dx.end(), 0.0);
    nn::matvec_t_acc(dx.data(), model.w1.data(), dpre.data(), d, d);
    if (!f.ids.empty()) {
      double inv_t = 1.0 / static_cast<double>(f.ids.size());
      for (int id : f.ids) {
        double* ge = g_emb + static_cast<size_t>(id) * d;
        for (int i = 0; i < d; ++i) ge[i] += dx[i] * inv_t;
      }
    }
  }
  return grad;
}

std::pair<RewardModel, std::vector<double>> train_reward(RewardModel model,
                                                         const std::vector<LabeledText>& data,
                                                         const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::runtime_error("train_reward: no training data");
  std::vector<double> curve;
  if (cfg.epochs == 0) return {std::move(model), curve};

  const size_t n = data.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<double> params = model.param_vector();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    double epoch_loss = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < n; start += cfg.batch_size) {
      size_t end = std::min(n, start + cfg.batch_size);
      std::vector<LabeledText> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

      double loss = reward_batch_loss(model, batch);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_reward: non-finite loss at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(steps));
      std::vector<double> grad = grad_reward_loss(model, batch);
      if (cfg.l2 > 0.0)
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.l2 * params[i];
      opt.step(params, grad);
      model.set_param_vector(params);
      epoch_loss += loss;
      ++steps;
    }
    curve.push_back(epoch_loss / static_cast<double>(steps));
  }
  return {std::move(model), curve};
}

}  // namespace bdrl
