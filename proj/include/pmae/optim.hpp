// optim.hpp -- AdamW with decoupled weight decay, and the warmup+cosine
// learning-rate schedule.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmae/common.hpp"
#include "pmae/tensor.hpp"

namespace pmae {

struct ScheduleConfig {
  int warmup_epochs = 10;
  double base_lr = 1e-4;
  int total_epochs = 0;
  double min_lr = 0.0;
};

// Linear ramp 0 -> base_lr over warmup, then cosine from base_lr to min_lr.
inline double lr_at(int epoch, const ScheduleConfig& cfg) {
  check(cfg.total_epochs > 0, "lr_at: total_epochs must be positive");
  check(cfg.warmup_epochs >= 0 && cfg.warmup_epochs <= cfg.total_epochs, "lr_at: warmup outside [0, total]");
  check(cfg.min_lr <= cfg.base_lr, "lr_at: min_lr exceeds base_lr");
  check(epoch >= 0 && epoch < cfg.total_epochs, "lr_at: epoch " + std::to_string(epoch) + " out of range");
  if (epoch < cfg.warmup_epochs) {
    return cfg.base_lr * static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
  }
  const int span = cfg.total_epochs - cfg.warmup_epochs;
  const double progress = span > 0 ? static_cast<double>(epoch - cfg.warmup_epochs) / static_cast<double>(span) : 0.0;
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, AdamWConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].second.size(), 0.0);
      v_[i].assign(params_[i].second.size(), 0.0);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return t_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // One decoupled-decay update. Aborts (throws) before touching any weight
  // if a gradient is non-finite.
  void step() {
    for (auto& [name, p] : params_) {
      for (T g : p.grad()) {
        check(std::isfinite(static_cast<double>(g)), "AdamW: non-finite gradient in '" + name + "'; step aborted");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      auto& val = p.values();
      const auto& grad = p.grad();
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double g = grad[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        double w = val[j];
        w -= cfg_.lr * cfg_.weight_decay * w;
        w -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        val[j] = static_cast<T>(w);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace pmae
