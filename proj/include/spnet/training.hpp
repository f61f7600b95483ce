// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_TRAINING_HPP_
#define SPNET_TRAINING_HPP_

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/network.hpp"

namespace spnet {

enum class OptimizerKind { SGD, Adam };
enum class Distillation { Off, OutOnly, OutPlusFeature };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::SGD;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<std::size_t> milestones{20, 27};
  double lr_decay = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  Distillation distillation = Distillation::Off;
  double alpha1 = 1.0;
  double alpha2 = 1e-7;
  std::uint64_t seed = 0;
  bool augment = true;
  double val_fraction = 0.2;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  bool record_time = false;          // seconds column stays 0 unless set

  /// Learning rate for a 1-based epoch: decayed once per milestone m < epoch.
  double lr_at(std::size_t epoch) const {
    double r = lr;
    for (auto m : milestones) {
      if (m < epoch) r *= lr_decay;
    }
    return r;
  }

  void validate(const ModelSpec& spec) const {
    if (!(lr > 0)) throw ConfigError("lr: must be > 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum: must lie in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay: must be >= 0");
    if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr_decay: must lie in (0, 1]");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("beta1/beta2: must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps: must be > 0");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
      if (milestones[i] <= milestones[i - 1]) throw ConfigError("milestones: must be strictly increasing");
    }
    if (epochs == 0) throw ConfigError("epochs: must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size: must be >= 2 (batch statistics need two samples)");
    if (alpha1 < 0) throw ConfigError("alpha1: must be >= 0");
    if (alpha2 < 0) throw ConfigError("alpha2: must be >= 0");
    if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("val_fraction: must lie in (0, 1)");
    if (distillation != Distillation::Off) {
      for (const auto& s : spec.switches) {
        std::size_t teachers = 0;
        for (const auto& t : spec.switches) teachers += (t.full_precision() && t.width == s.width) ? 1 : 0;
        if (teachers != 1) {
          throw ConfigError("distillation: needs exactly one (32,32," + s.width.to_string() +
                            ") switch to teach width " + s.width.to_string() + ", found " + std::to_string(teachers));
        }
      }
    }
  }
};

/// SGD with momentum or Adam over named parameters. State tensors are keyed
/// by parameter name and created on first use.
template <typename T = float>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<Parameter<T>*>& params, double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (auto* p : params) {
      auto& m = slot(first_, *p);
      const bool decay = cfg_.weight_decay > 0 && p->name.ends_with("weight");
      if (cfg_.optimizer == OptimizerKind::SGD) {
        const T mu = static_cast<T>(cfg_.momentum), l = static_cast<T>(lr), wd = static_cast<T>(cfg_.weight_decay);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
          const T g = p->grad[i] + (decay ? wd * p->value[i] : T(0));
          m[i] = mu * m[i] + g;
          p->value[i] -= l * m[i];
        }
      } else {
        auto& v = slot(second_, *p);
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
          const T g = p->grad[i] + (decay ? static_cast<T>(cfg_.weight_decay) * p->value[i] : T(0));
          m[i] = b1 * m[i] + (T(1) - b1) * g;
          v[i] = b2 * v[i] + (T(1) - b2) * g * g;
          const double mhat = static_cast<double>(m[i]) / bc1;
          const double vhat = static_cast<double>(v[i]) / bc2;
          p->value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
        }
      }
    }
  }

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  /// Creates every state tensor for `params` so a checkpoint has a fixed layout.
  void attach(const std::vector<Parameter<T>*>& params) {
    for (auto* p : params) {
      slot(first_, *p);
      if (cfg_.optimizer == OptimizerKind::Adam) slot(second_, *p);
    }
  }

  void visit_state(const std::function<void(const std::string&, Tensor<T>&)>& f) {
    const char* a = cfg_.optimizer == OptimizerKind::SGD ? "/velocity" : "/m";
    for (auto& [name, t] : first_) f("optim/" + name + a, t);
    for (auto& [name, t] : second_) f("optim/" + name + "/v", t);
  }

 private:
  static Tensor<T>& slot(std::map<std::string, Tensor<T>>& table, const Parameter<T>& p) {
    auto it = table.find(p.name);
    if (it == table.end()) it = table.emplace(p.name, Tensor<T>::zeros_like(p.value)).first;
    if (it->second.shape() != p.value.shape()) throw ShapeError("optimizer state for " + p.name + " has the wrong shape");
    return it->second;
  }

  TrainConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor<T>> first_;
  std::map<std::string, Tensor<T>> second_;
};

/// Per-switch results of one step, indexed like the registry.
struct StepStats {
  std::vector<double> loss;
  std::vector<std::size_t> correct;
  std::size_t batch = 0;
};

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  const auto pred = kernels::argmax_rows(logits);
  std::size_t c = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) c += pred[n] == static_cast<std::size_t>(labels[n]) ? 1 : 0;
  return c;
}

/// Registry indices in execution order. Without distillation this is the
/// registered order; with it, every full-precision teacher runs first.
inline std::vector<std::size_t> execution_order(const SwitchRegistry& reg, Distillation d) {
  std::vector<std::size_t> order;
  if (d != Distillation::Off) {
    for (std::size_t i = 0; i < reg.size(); ++i) {
      if (reg.switches()[i].full_precision()) order.push_back(i);
    }
  }
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (d == Distillation::Off || !reg.switches()[i].full_precision()) order.push_back(i);
  }
  return order;
}

/// Student objective: alpha1 * KL(SG(p_r) || p_q) + alpha2 * sum_t |Quant_a(f_r,t) - f_q,t|^2,
/// with f_r quantized by the student's activation quantizer. Gradients reach
/// the teacher only through the feature term.
template <typename T>
Var<T> distill_loss(const Var<T>& teacher_logits, const std::vector<Var<T>>& teacher_taps,
                    const Var<T>& student_logits, const std::vector<Var<T>>& student_taps, const QuantScheme& scheme,
                    int student_bits_a, const TrainConfig& cfg) {
  const auto p_r = kernels::softmax(teacher_logits.value());
  auto loss = ops::scale(ops::kl_divergence(p_r, student_logits), static_cast<T>(cfg.alpha1));
  if (cfg.distillation == Distillation::OutPlusFeature) {
    if (teacher_taps.size() != student_taps.size()) throw ShapeError("distillation: tap counts differ");
    for (std::size_t t = 0; t < teacher_taps.size(); ++t) {
      auto fr = quantize_activations(teacher_taps[t], scheme, student_bits_a);
      loss = ops::add(loss, ops::scale(ops::mse(fr, student_taps[t]), static_cast<T>(cfg.alpha2)));
    }
  }
  return loss;
}

/// Zeroes the gradients, then accumulates every switch's gradient into the
/// shared buffers for one batch. `only` restricts the switches that run.
template <typename T>
StepStats accumulate_gradients(Model<T>& model, const Tensor<T>& x, std::span<const int> y, const TrainConfig& cfg,
                               const std::vector<std::size_t>* only = nullptr) {
  const auto& reg = model.registry();
  StepStats st;
  st.loss.assign(reg.size(), 0.0);
  st.correct.assign(reg.size(), 0);
  st.batch = y.size();
  model.zero_grad();
  auto selected = [&](std::size_t i) { return !only || std::find(only->begin(), only->end(), i) != only->end(); };

  if (cfg.distillation == Distillation::Off) {
    for (std::size_t i : execution_order(reg, cfg.distillation)) {
      if (!selected(i)) continue;
      Tape<T> tape;
      auto r = model.forward(tape, x, model.select(reg.switches()[i]), Mode::Train);
      auto loss = ops::softmax_cross_entropy(r.logits, y);
      st.loss[i] = static_cast<double>(loss.value()[0]);
      st.correct[i] = count_correct(r.logits.value(), y);
      tape.backward(loss);
    }
    return st;
  }

  Tape<T> tape;
  std::vector<std::optional<typename Model<T>::Result>> results(reg.size());
  std::optional<Var<T>> total;
  auto add_loss = [&](const Var<T>& l) { total = total ? ops::add(*total, l) : l; };
  for (std::size_t i : execution_order(reg, cfg.distillation)) {
    const auto& s = reg.switches()[i];
    if (!selected(i)) {
      if (!s.full_precision()) continue;
    }
    results[i] = model.forward(tape, x, model.select(s), Mode::Train);
    const auto& r = *results[i];
    st.correct[i] = count_correct(r.logits.value(), y);
    Var<T> loss;
    if (s.full_precision()) {
      loss = ops::softmax_cross_entropy(r.logits, y);
    } else {
      std::size_t teacher = reg.size();
      for (std::size_t j = 0; j < reg.size(); ++j) {
        if (reg.switches()[j].full_precision() && reg.switches()[j].width == s.width) teacher = j;
      }
      if (teacher == reg.size() || !results[teacher]) {
        throw ConfigError("distillation: no full-precision teacher at width " + s.width.to_string());
      }
      const auto& tr = *results[teacher];
      loss = distill_loss(tr.logits, tr.taps, r.logits, r.taps, model.scheme(), s.bits_a, cfg);
    }
    st.loss[i] = static_cast<double>(loss.value()[0]);
    if (selected(i)) add_loss(loss);
  }
  if (total) tape.backward(*total);
  return st;
}

/// One multi-switch iteration: accumulate every switch's gradient, then a
/// single optimizer step with the summed gradient.
template <typename T>
StepStats sp_train_step(Model<T>& model, const Tensor<T>& x, std::span<const int> y, const TrainConfig& cfg,
                        Optimizer<T>& opt, double lr) {
  auto st = accumulate_gradients(model, x, y, cfg);
  opt.step(model.parameters(), lr);
  return st;
}

/// Eval-mode top-1 accuracy; ties go to the lowest class index.
template <typename T>
double evaluate(Model<T>& model, const data::Dataset& ds, const SwitchConfig& s, std::size_t batch_size = 250) {
  (void)model.select(s);
  if (ds.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < ds.size(); b += batch_size) {
    idx.clear();
    for (std::size_t i = b; i < std::min(ds.size(), b + batch_size); ++i) idx.push_back(i);
    const auto x = ds.images(idx).template cast<T>();
    const auto y = ds.label_batch(idx);
    correct += count_correct(model.predict(x, s), y);
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct MetricsRow {
  std::size_t epoch = 0;
  SwitchConfig sw;
  double train_loss = 0;
  double train_top1 = 0;
  double val_top1 = 0;
  double seconds = 0;
  bool operator==(const MetricsRow&) const = default;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "epoch,switch_bits_w,switch_bits_a,width,train_loss,train_top1,val_top1,seconds\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.sw.bits_w << ',' << r.sw.bits_a << ',' << r.sw.width.to_string() << ','
       << format_double(r.train_loss) << ',' << format_double(r.train_top1) << ',' << format_double(r.val_top1)
       << ',' << format_double(r.seconds) << '\n';
  }
  return os.str();
}

/// Epoch loop over a fixed train/validation split. Every per-epoch random
/// draw (shuffle, augmentation) comes from a stream indexed by the epoch, so
/// a run restored at epoch e continues exactly as an uninterrupted one.
template <typename T = float>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig cfg, const data::Dataset& train, const data::Dataset& val)
      : model_(model), cfg_(std::move(cfg)), train_(train), val_(val), opt_(cfg_) {
    cfg_.validate(model_.spec());
    if (train_.size() < 2) throw ConfigError("training split needs at least two records");
    opt_.attach(model_.parameters());
  }

  std::size_t epoch() const { return epoch_; }
  void set_epoch(std::size_t e) { epoch_ = e; }
  const TrainConfig& config() const { return cfg_; }
  Optimizer<T>& optimizer() { return opt_; }
  std::vector<MetricsRow>& metrics() { return metrics_; }
  Model<T>& model() { return model_; }

  /// Trains epoch() + 1 and appends one metrics row per switch.
  void run_epoch() {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t e = epoch_ + 1;
    const auto order = data::epoch_order(train_.size(), cfg_.seed, e);
    auto aug = Rng::stream(cfg_.seed, StreamPurpose::Augment, e);
    const double lr = cfg_.lr_at(e);
    const auto& reg = model_.registry();
    std::vector<double> loss(reg.size(), 0.0);
    std::vector<std::size_t> correct(reg.size(), 0);
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
      const auto end = std::min(order.size(), b + cfg_.batch_size);
      if (end - b < 2) break;
      std::span<const std::size_t> idx(order.data() + b, end - b);
      auto x = train_.images(idx);
      data::augment(x, aug, cfg_.augment);
      const auto y = train_.label_batch(idx);
      const auto st = sp_train_step(model_, x.template cast<T>(), y, cfg_, opt_, lr);
      for (std::size_t i = 0; i < reg.size(); ++i) {
        loss[i] += st.loss[i] * static_cast<double>(st.batch);
        correct[i] += st.correct[i];
      }
      seen += st.batch;
    }
    const double seconds =
        cfg_.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() : 0.0;
    for (std::size_t i = 0; i < reg.size(); ++i) {
      MetricsRow r;
      r.epoch = e;
      r.sw = reg.switches()[i];
      r.train_loss = loss[i] / static_cast<double>(seen);
      r.train_top1 = static_cast<double>(correct[i]) / static_cast<double>(seen);
      r.val_top1 = evaluate(model_, val_, r.sw);
      r.seconds = seconds;
      metrics_.push_back(r);
    }
    epoch_ = e;
  }

  /// Runs until cfg.epochs, calling `after_epoch` after each one.
  void run(const std::function<void(Trainer&)>& after_epoch = {}) {
    while (epoch_ < cfg_.epochs) {
      run_epoch();
      if (after_epoch) after_epoch(*this);
    }
  }

  /// Latest validation accuracy of a switch (-1 before the first epoch).
  double last_val(const SwitchConfig& s) const {
    for (auto it = metrics_.rbegin(); it != metrics_.rend(); ++it) {
      if (it->sw == s) return it->val_top1;
    }
    return -1;
  }

 private:
  Model<T>& model_;
  TrainConfig cfg_;
  const data::Dataset& train_;
  const data::Dataset& val_;
  Optimizer<T> opt_;
  std::size_t epoch_ = 0;
  std::vector<MetricsRow> metrics_;
};

}  // namespace spnet

#endif  // SPNET_TRAINING_HPP_
