#pragma once

#include <cmath>
#include <vector>

#include "mfr/blocks.hpp"

namespace mfr {

struct SGDConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// Momentum SGD with decoupled-in-name-only weight decay folded into the
// gradient: g' = g + wd*p; v = mu*v + g'; p -= lr*v.
template <typename S>
struct SGD {
  SGDConfig cfg;
  std::vector<ArrayX<S>> velocity;

  void init(const std::vector<ParamRef<S>>& params, const SGDConfig& c) {
    cfg = c;
    velocity.clear();
    for (const auto& p : params) velocity.push_back(ArrayX<S>::Zero(p.tensor.size()));
  }
  void step(const std::vector<ParamRef<S>>& params, double lr) {
    if (params.size() != velocity.size())
      throw StateError("sgd: parameter count changed since init");
    const S mu = static_cast<S>(cfg.momentum), wd = static_cast<S>(cfg.weight_decay);
    const S eta = static_cast<S>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto impl = params[i].tensor.impl();
      if (impl->grad.size() != impl->data.size())
        throw StateError("sgd: missing gradient for " + params[i].name);
      velocity[i] = mu * velocity[i] + (impl->grad + wd * impl->data);
      impl->data -= eta * velocity[i];
    }
  }
};

struct ScheduleConfig {
  double base_lr = 0.1;
  double warmup_epochs = 0.1;
  double decay_epochs = 16.0;
  double total_epochs = 24.0;
  double lr_min = 1e-5;
  int steps_per_epoch = 0;
  double restart_peak = 0.01;  // base_lr/10 for the default base
  double restart_len = 4.0;    // epochs per restart cycle

  void validate() const {
    if (steps_per_epoch <= 0) throw ConfigError("schedule: steps_per_epoch must be positive");
    if (base_lr <= 0) throw ConfigError("schedule: base_lr must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= decay_epochs || decay_epochs > total_epochs)
      throw ConfigError("schedule: need warmup_epochs < decay_epochs <= total_epochs");
    if (lr_min <= 0 || lr_min >= base_lr)
      throw ConfigError("schedule: need 0 < lr_min < base_lr");
    if (restart_peak <= 0 || restart_peak > base_lr)
      throw ConfigError("schedule: restart_peak must be in (0, base_lr]");
    if (restart_len <= 0) throw ConfigError("schedule: restart_len must be positive");
  }
};

// Warmup rises linearly to base_lr, one cosine arc decays to lr_min by
// decay_epochs, then fixed-length cosine restart cycles from restart_peak.
inline double lr_at(long long step, const ScheduleConfig& c) {
  c.validate();
  if (step < 0) throw ParameterError("lr_at: negative step");
  const double spe = static_cast<double>(c.steps_per_epoch);
  const long long total = std::llround(c.total_epochs * spe);
  if (step >= total)
    throw ParameterError("lr_at: step " + std::to_string(step) +
                         " beyond total training length " + std::to_string(total));
  const long long warm = static_cast<long long>(c.warmup_epochs * spe);
  const long long decay = std::llround(c.decay_epochs * spe);
  if (step < warm) return c.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (step <= decay) {
    const double t = static_cast<double>(step - warm) / static_cast<double>(decay - warm);
    return c.lr_min + 0.5 * (c.base_lr - c.lr_min) * (1.0 + std::cos(M_PI * t));
  }
  const long long cycle = std::llround(c.restart_len * spe);
  const long long pos = (step - decay) % cycle;
  const double t = static_cast<double>(pos) / static_cast<double>(cycle);
  return c.lr_min + 0.5 * (c.restart_peak - c.lr_min) * (1.0 + std::cos(M_PI * t));
}

// Shadow copy of every parameter, updated once per optimizer step.
template <typename S>
struct EMAState {
  double decay = 0.999;
  std::vector<ArrayX<S>> shadow;

  void init(const std::vector<ParamRef<S>>& params, double decay_) {
    if (decay_ <= 0 || decay_ >= 1) throw ParameterError("ema: decay must lie in (0,1)");
    decay = decay_;
    shadow.clear();
    for (const auto& p : params) shadow.push_back(p.tensor.data());
  }
};

template <typename S>
void ema_update(EMAState<S>& state, const std::vector<ParamRef<S>>& params) {
  if (state.shadow.size() != params.size())
    throw StateError("ema: parameter count differs from shadow");
  const S d = static_cast<S>(state.decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.shadow[i].size() != params[i].tensor.size())
      throw StateError("ema: shape drift on " + params[i].name);
    state.shadow[i] = d * state.shadow[i] + (S(1) - d) * params[i].tensor.data();
  }
}

// Exchange live parameters and shadow values; calling twice restores both
// sides bitwise.
template <typename S>
void ema_swap(EMAState<S>& state, const std::vector<ParamRef<S>>& params) {
  if (state.shadow.size() != params.size())
    throw StateError("ema: parameter count differs from shadow");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.shadow[i].size() != params[i].tensor.size())
      throw StateError("ema: shape drift on " + params[i].name);
    state.shadow[i].swap(params[i].tensor.impl()->data);
  }
}

}  // namespace mfr
