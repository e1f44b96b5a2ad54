#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffkit/tensor.hpp"

namespace ffkit {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over an explicit parameter list. Moment buffers are
/// created lazily, one per trainable parameter, keyed by tensor identity.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {
    require_arg(config.learning_rate > 0.0, "optimizer: learning rate must be positive");
    require_arg(config.beta1 >= 0.0 && config.beta1 < 1.0, "optimizer: beta1 must be in [0,1)");
    require_arg(config.beta2 >= 0.0 && config.beta2 < 1.0, "optimizer: beta2 must be in [0,1)");
    require_arg(config.epsilon > 0.0, "optimizer: epsilon must be positive");
  }

  [[nodiscard]] const OptimizerConfig& config() const { return config_; }
  void set_learning_rate(double lr) {
    require_arg(lr >= 0.0, "optimizer: learning rate must be nonnegative");
    config_.learning_rate = lr;
  }
  [[nodiscard]] long steps() const { return steps_; }
  [[nodiscard]] std::size_t state_count() const { return state_.size(); }

  void step(std::vector<Tensor>& params, const GradMap& grads) {
    require_arg(!params.empty(), "optimizer_step: no trainable parameters");
    for (const auto& p : params) {
      require_arg(p.requires_grad(), "optimizer_step: parameter '" + p.name() + "' is frozen");
      (void)grads.at(p);  // throws missing_gradient naming the parameter
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (auto& p : params) {
      const auto& g = grads.at(p);
      auto w = p.mutable_data();
      if (config_.kind == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config_.learning_rate * g[i];
        continue;
      }
      auto& st = state_[p.id()];
      if (st.m.empty()) {
        st.m.assign(w.size(), 0.0);
        st.v.assign(w.size(), 0.0);
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g[i];
        st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  OptimizerConfig config_;
  long steps_ = 0;
  std::unordered_map<const void*, Moments> state_;
};

enum class LrSchedule { constant, cosine };

inline std::string_view to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

inline LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw Error(ErrorKind::invalid_argument, "unknown learning-rate schedule '" + std::string(s) + "'");
}

/// Learning rate for step `step` (1-based) of `total`. Cosine anneals from
/// `base` towards zero, reaching base * (1 + cos(pi (total-1)/total)) / 2 on
/// the last step.
inline double scheduled_lr(LrSchedule schedule, double base, std::size_t step, std::size_t total) {
  if (schedule == LrSchedule::constant || total <= 1) return base;
  const double pi = 3.14159265358979323846;
  const double frac = static_cast<double>(step - 1) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(pi * frac));
}

}  // namespace ffkit
