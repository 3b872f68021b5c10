#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bdrl {

enum class OptimizerKind { SGD, ADAM };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adam") return OptimizerKind::ADAM;
  throw std::runtime_error("unknown optimizer \"" + std::string(s) + "\"");
}

inline std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::SGD ? "sgd" : "adam";
}

// Flat-vector optimizer. SGD keeps no state; Adam keeps per-parameter
// moments. Fully deterministic.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate)
      : kind_(kind), lr_(learning_rate) {}

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != grads.size())
      throw std::runtime_error("optimizer: parameter/gradient size mismatch");
    if (kind_ == OptimizerKind::SGD) {
      for (size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grads[i];
      return;
    }
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    ++t_;
    double bc1 = 1.0 - std::pow(kBeta1, t_);
    double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

}  // namespace bdrl
