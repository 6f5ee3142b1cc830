#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "depscreen/common.hpp"
#include "depscreen/tensor.hpp"

namespace depscreen {

// Rectified Adam. Moments use beta1/beta2 exponential averaging; the
// rectified adaptive step is taken only once the approximated SMA length
// rho_t exceeds 4, otherwise the update falls back to plain bias-corrected
// momentum:
//   rho_inf = 2 / (1 - beta2) - 1
//   rho_t   = rho_inf - 2 t beta2^t / (1 - beta2^t)
//   r_t     = sqrt(((rho_t-4)(rho_t-2) rho_inf) / ((rho_inf-4)(rho_inf-2) rho_t))
//   theta  -= lr * r_t * m_hat / (sqrt(v_hat) + eps)   if rho_t > 4
//   theta  -= lr * m_hat                               otherwise
struct RAdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ParameterError("beta1 must lie in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ParameterError("beta2 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  }
};

class RAdam {
 public:
  explicit RAdam(RAdamOptions options = {}) : options_(options) { options_.validate(); }

  double& lr() { return options_.lr; }
  double lr() const { return options_.lr; }
  std::int64_t step_count() const { return step_count_; }
  bool last_step_rectified() const { return last_step_rectified_; }

  void step(std::vector<Param*>& params) {
    ensure_state(params);
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double beta1 = options_.beta1, beta2 = options_.beta2;
    const double beta1_t = std::pow(beta1, t);
    const double beta2_t = std::pow(beta2, t);
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
    const bool rectified = rho_t > 4.0;
    double rect = 0.0;
    if (rectified) {
      rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                       ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    last_step_rectified_ = rectified;

    for (size_t i = 0; i < params.size(); ++i) {
      Param* p = params[i];
      if (!p->trainable) continue;
      if (!p->grad.all_finite()) {
        throw NumericError("non-finite gradient in parameter '" + p->name + "'");
      }
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::int64_t k = 0; k < p->value.numel(); ++k) {
        const double g = p->grad.data[k];
        m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * g;
        v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * g * g;
        const double m_hat = m.data[k] / (1.0 - beta1_t);
        if (rectified) {
          const double v_hat = std::sqrt(v.data[k] / (1.0 - beta2_t));
          p->value.data[k] -= options_.lr * rect * m_hat / (v_hat + options_.epsilon);
        } else {
          p->value.data[k] -= options_.lr * m_hat;
        }
      }
    }
  }

  // state serialization: moments keyed by optimizer slot index
  std::vector<std::pair<std::string, const Tensor*>> state_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back("optim.radam.m." + std::to_string(i), &m_[i]);
      out.emplace_back("optim.radam.v." + std::to_string(i), &v_[i]);
    }
    return out;
  }

  nlohmann::json state_scalars() const {
    return {{"step_count", step_count_},
            {"lr", options_.lr},
            {"beta1", options_.beta1},
            {"beta2", options_.beta2},
            {"epsilon", options_.epsilon}};
  }

  void restore(const nlohmann::json& scalars, const std::map<std::string, Tensor>& tensors,
               std::vector<Param*>& params) {
    ensure_state(params);
    step_count_ = scalars.at("step_count").get<std::int64_t>();
    options_.lr = scalars.at("lr").get<double>();
    options_.beta1 = scalars.value("beta1", options_.beta1);
    options_.beta2 = scalars.value("beta2", options_.beta2);
    options_.epsilon = scalars.value("epsilon", options_.epsilon);
    options_.validate();
    for (size_t i = 0; i < params.size(); ++i) {
      auto mi = tensors.find("optim.radam.m." + std::to_string(i));
      auto vi = tensors.find("optim.radam.v." + std::to_string(i));
      if (mi == tensors.end() || vi == tensors.end()) {
        throw CheckpointError("checkpoint missing optimizer moments for slot " +
                              std::to_string(i));
      }
      if (mi->second.shape != params[i]->value.shape) {
        throw CheckpointError("optimizer moment shape mismatch at slot " + std::to_string(i));
      }
      m_[i] = mi->second;
      v_[i] = vi->second;
    }
  }

 private:
  void ensure_state(const std::vector<Param*>& params) {
    if (!m_.empty()) {
      if (m_.size() != params.size()) {
        throw InvalidInputError("optimizer state does not match parameter list");
      }
      return;
    }
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
      m_.emplace_back(p->value.shape);
      v_.emplace_back(p->value.shape);
    }
  }

  RAdamOptions options_;
  std::int64_t step_count_ = 0;
  bool last_step_rectified_ = false;
  std::vector<Tensor> m_, v_;
};

// Lookahead slow weights: every k inner steps,
//   slow += alpha * (fast - slow); fast = slow.
struct LookaheadOptions {
  int k = 5;
  double alpha = 0.5;

  void validate() const {
    if (k < 1) throw ParameterError("lookahead k must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("lookahead alpha must lie in [0,1]");
  }
};

class Lookahead {
 public:
  explicit Lookahead(LookaheadOptions options = {}) : options_(options) {
    options_.validate();
  }

  int k() const { return options_.k; }
  double alpha() const { return options_.alpha; }
  std::int64_t inner_steps() const { return inner_steps_; }

  // Snapshots the slow weights; call before the first inner step so the
  // slow weights start at theta_0.
  void attach(const std::vector<Param*>& params) {
    slow_.clear();
    slow_.reserve(params.size());
    for (const Param* p : params) slow_.push_back(p->value);
    inner_steps_ = 0;
  }

  // call once after every inner optimizer step
  void after_step(std::vector<Param*>& params) {
    if (slow_.empty()) {
      throw InvalidInputError("lookahead not attached to parameters");
    }
    if (slow_.size() != params.size()) {
      throw InvalidInputError("lookahead state does not match parameter list");
    }
    ++inner_steps_;
    if (inner_steps_ % options_.k != 0) return;
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& slow = slow_[i];
      Tensor& fast = params[i]->value;
      for (std::int64_t j = 0; j < fast.numel(); ++j) {
        slow.data[j] += options_.alpha * (fast.data[j] - slow.data[j]);
        fast.data[j] = slow.data[j];
      }
    }
  }

  std::vector<std::pair<std::string, const Tensor*>> state_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (size_t i = 0; i < slow_.size(); ++i) {
      out.emplace_back("optim.lookahead.slow." + std::to_string(i), &slow_[i]);
    }
    return out;
  }

  nlohmann::json state_scalars() const {
    return {{"inner_steps", inner_steps_}, {"k", options_.k}, {"alpha", options_.alpha}};
  }

  void restore(const nlohmann::json& scalars, const std::map<std::string, Tensor>& tensors,
               std::vector<Param*>& params) {
    inner_steps_ = scalars.at("inner_steps").get<std::int64_t>();
    slow_.clear();
    slow_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = tensors.find("optim.lookahead.slow." + std::to_string(i));
      if (it == tensors.end()) {
        throw CheckpointError("checkpoint missing slow weights for slot " + std::to_string(i));
      }
      if (it->second.shape != params[i]->value.shape) {
        throw CheckpointError("slow weight shape mismatch at slot " + std::to_string(i));
      }
      slow_[i] = it->second;
    }
  }

 private:
  LookaheadOptions options_;
  std::int64_t inner_steps_ = 0;
  std::vector<Tensor> slow_;
};

// Plateau-triggered learning rate decay on a lower-is-better metric.
// An epoch "improves" when the metric drops below best by more than
// `threshold`; after more than `patience` non-improving epochs in a row the
// learning rate is multiplied by `factor` (floored at min_lr).
struct PlateauOptions {
  double factor = 0.5;
  int patience = 5;
  double min_lr = 1e-6;
  double threshold = 1e-4;

  void validate() const {
    if (!(factor > 0.0 && factor < 1.0)) throw ParameterError("plateau factor must lie in (0,1)");
    if (patience < 0) throw ParameterError("plateau patience must be >= 0");
    if (!(min_lr >= 0.0)) throw ParameterError("plateau min_lr must be >= 0");
  }
};

class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauOptions options = {}) : options_(options) {
    options_.validate();
  }

  // Returns true when the learning rate was reduced this epoch.
  bool step(double metric, double& lr) {
    if (!is_finite(metric)) throw NumericError("plateau metric must be finite");
    if (metric < best_ - options_.threshold) {
      best_ = metric;
      wait_ = 0;
      return false;
    }
    ++wait_;
    if (wait_ > options_.patience) {
      lr = std::max(lr * options_.factor, options_.min_lr);
      wait_ = 0;
      return true;
    }
    return false;
  }

  double best() const { return best_; }
  int wait() const { return wait_; }

  nlohmann::json state_scalars() const {
    return {{"best", best_}, {"wait", wait_}};
  }

  void restore(const nlohmann::json& scalars) {
    best_ = scalars.at("best").get<double>();
    wait_ = scalars.at("wait").get<int>();
  }

 private:
  PlateauOptions options_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

}  // namespace depscreen
