#pragma once

// Adam with linear warmup and inverse-sqrt decay, dev-loss early stopping.

#include "rfadoc/document.hpp"
#include "rfadoc/transformer.hpp"

#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

namespace rfadoc {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double peak_lr = 2e-3;
  int warmup_steps = 400;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  int eval_every = 100;
  int patience = 5;  // evaluations without dev improvement before stopping
  std::uint64_t seed = 1;

  void validate() const {
    require(steps >= 0, "train: steps must be >= 0");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(peak_lr >= 0, "train: learning rate must be >= 0");
    require(warmup_steps >= 0, "train: warmup must be >= 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0, "train: bad Adam hyper-parameters");
    require(eval_every >= 1 && patience >= 1, "train: eval_every and patience must be >= 1");
  }
};

/// Step is 1-based. Linear ramp to the peak over `warmup` steps, then
/// peak * sqrt(warmup / step).
inline double learning_rate(const TrainConfig& c, int step) {
  require(step >= 1, "learning_rate: step is 1-based");
  if (c.warmup_steps == 0) return c.peak_lr;
  if (step <= c.warmup_steps) return c.peak_lr * double(step) / double(c.warmup_steps);
  return c.peak_lr * std::sqrt(double(c.warmup_steps) / double(step));
}

template <typename Scalar>
struct AdamState {
  Parameters<Scalar> m, v;
  long step = 0;

  explicit AdamState(const Parameters<Scalar>& like) : m(like.zeros_like()), v(like.zeros_like()) {}
};

template <typename Scalar>
void adam_update(Parameters<Scalar>& params, const Parameters<Scalar>& grads, AdamState<Scalar>& st,
                 const TrainConfig& c, double lr) {
  ++st.step;
  const double bc1 = 1 - std::pow(c.beta1, double(st.step));
  const double bc2 = 1 - std::pow(c.beta2, double(st.step));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = st.m.tensors();
  auto v = st.v.tensors();
  const Scalar b1(c.beta1), b2(c.beta2), eps(c.eps);
  const Scalar step_size(lr / bc1), inv_bc2(1.0 / bc2);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto gi = g[i].tensor->array();
    m[i].tensor->array() = b1 * m[i].tensor->array() + (Scalar(1) - b1) * gi;
    v[i].tensor->array() = b2 * v[i].tensor->array() + (Scalar(1) - b2) * gi.square();
    p[i].tensor->array() -= step_size * m[i].tensor->array() / ((v[i].tensor->array() * inv_bc2).sqrt() + eps);
  }
}

/// Sliding-window training examples: one per target sentence.
inline std::vector<Example> make_examples(const std::vector<ParallelDocument>& docs, int L) {
  std::vector<Example> out;
  for (const auto& d : docs) {
    auto src = make_windows(d.source, L);
    auto tgt = make_windows(d.target, L);
    require_dims(src.size() == tgt.size(), "make_examples: source/target sentence counts differ");
    for (std::size_t i = 0; i < src.size(); ++i) out.push_back({src[i].tokens, tgt[i].tokens});
  }
  return out;
}

struct EvalStats {
  double loss = 0;  // token-weighted mean
  std::size_t num_tokens = 0;
  std::size_t num_correct = 0;
  double accuracy() const { return num_tokens ? double(num_correct) / double(num_tokens) : 0.0; }
};

/// Teacher-forced loss and next-token accuracy.
template <typename Scalar>
EvalStats evaluate(const Model<Scalar>& m, const std::vector<Example>& examples, std::size_t chunk = 64) {
  EvalStats s;
  double sum = 0;
  for (std::size_t i = 0; i < examples.size(); i += chunk) {
    std::vector<Example> part(examples.begin() + static_cast<std::ptrdiff_t>(i),
                              examples.begin() + static_cast<std::ptrdiff_t>(std::min(examples.size(), i + chunk)));
    auto r = forward(m, make_batch(part));
    sum += static_cast<double>(r.loss) * double(r.num_tokens);
    s.num_tokens += r.num_tokens;
    s.num_correct += r.num_correct;
  }
  s.loss = s.num_tokens ? sum / double(s.num_tokens) : 0.0;
  return s;
}

struct TrainLogEntry {
  int step = 0;
  double lr = 0;
  double train_loss = 0;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();
};

template <typename Scalar>
struct TrainResult {
  Model<Scalar> model;  // best by dev loss, or last when there is no dev set
  std::vector<TrainLogEntry> curve;
  int steps_run = 0;
  int best_step = 0;
  double best_dev_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

using TrainCallback = std::function<void(const TrainLogEntry&)>;

template <typename Scalar>
TrainResult<Scalar> train(Model<Scalar> model, const std::vector<Example>& train_set,
                          const std::vector<Example>& dev_set, const TrainConfig& cfg,
                          const TrainCallback& on_log = {}) {
  cfg.validate();
  require(!train_set.empty(), "train: corpus is empty");
  TrainResult<Scalar> result{model, {}, 0, 0, std::numeric_limits<double>::infinity(), false};
  AdamState<Scalar> adam(model.params);
  std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  int bad_evals = 0;

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<Example> batch;
    while (batch.size() < static_cast<std::size_t>(cfg.batch_size)) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    const double lr = learning_rate(cfg, step);
    LossAndGradients<Scalar> lg;
    try {
      lg = backward(model, make_batch(batch));
    } catch (const RuntimeFailure& e) {
      throw RuntimeFailure("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    for (const auto& t : lg.gradients.tensors())
      if (!t.tensor->allFinite())
        throw RuntimeFailure("training diverged at step " + std::to_string(step) + ": non-finite gradient in " + t.name);
    adam_update(model.params, lg.gradients, adam, cfg, lr);
    result.steps_run = step;

    TrainLogEntry entry{step, lr, static_cast<double>(lg.forward.loss)};
    const bool eval_now = !dev_set.empty() && (step % cfg.eval_every == 0 || step == cfg.steps);
    if (eval_now) {
      const EvalStats dev = evaluate(model, dev_set);
      entry.dev_loss = dev.loss;
      entry.dev_accuracy = dev.accuracy();
      if (dev.loss < result.best_dev_loss) {
        result.best_dev_loss = dev.loss;
        result.best_step = step;
        result.model = model;
        bad_evals = 0;
      } else if (++bad_evals >= cfg.patience) {
        result.early_stopped = true;
      }
    }
    result.curve.push_back(entry);
    if (on_log) on_log(entry);
    if (result.early_stopped) break;
  }
  if (dev_set.empty()) {
    result.model = std::move(model);
    result.best_step = result.steps_run;
  }
  return result;
}

}  // namespace rfadoc
