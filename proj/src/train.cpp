#include "vitcat/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vitcat/errors.hpp"
#include "vitcat/ranking.hpp"
#include "vitcat/rng.hpp"

namespace vitcat::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (weight_decay < 0.0 || weight_decay >= 1.0) {
    throw ConfigError("train: weight decay must be in [0, 1)");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: betas must be in (0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
}

OptimState OptimState::like(const std::vector<Tensor>& params) {
  OptimState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

Tensor bce_loss(const Tensor& pred, std::span<const uint8_t> target) {
  if (pred.numel() != target.size()) {
    throw ShapeError("bce_loss: prediction/target length mismatch");
  }
  const size_t n = target.size();
  std::vector<double> y(n), y_inv(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = static_cast<double>(target[i]);
    y_inv[i] = 1.0 - y[i];
  }
  Tensor p = clamp(pred, 1e-7, 1.0 - 1e-7);
  Tensor yt(pred.shape(), std::move(y));
  Tensor yt_inv(pred.shape(), std::move(y_inv));
  Tensor one_minus_p = add_scalar(scale(p, -1.0), 1.0);
  Tensor ll = add(mul(yt, log_elem(p)), mul(yt_inv, log_elem(one_minus_p)));
  return scale(sum(ll), -1.0 / static_cast<double>(n));
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               OptimState& state, const TrainConfig& cfg) {
  cfg.validate();
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.step;
  const auto step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step);

  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i])) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    const size_t n = params[i].numel();
    std::vector<double> p(params[i].data().begin(), params[i].data().end());
    std::vector<double> m(state.m[i].data().begin(), state.m[i].data().end());
    std::vector<double> v(state.v[i].data().begin(), state.v[i].data().end());
    for (size_t j = 0; j < n; ++j) {
      double g = grads[i].at(j);
      if (cfg.decoupled_decay) {
        p[j] -= cfg.learning_rate * cfg.weight_decay * p[j];
      } else {
        g += cfg.weight_decay * p[j];
      }
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    params[i] = Tensor(params[i].shape(), std::move(p));
    state.m[i] = Tensor(state.m[i].shape(), std::move(m));
    state.v[i] = Tensor(state.v[i].shape(), std::move(v));
  }
}

double topk_accuracy(std::span<const double> pred, std::span<const uint8_t> target,
                     size_t k) {
  if (pred.size() != target.size()) {
    throw ShapeError("topk_accuracy: prediction/target length mismatch");
  }
  if (k < 1 || k > pred.size()) {
    throw ConfigError("topk_accuracy: need 1 <= k <= N_c");
  }
  const std::vector<uint32_t> picks = topk_indices(pred, k);
  size_t hits = 0;
  for (uint32_t id : picks) hits += target[id] != 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

EvalResult evaluate(const model::ModelParams& params, const model::ViTConfig& cfg,
                    std::span<const pipeline::Sample> samples) {
  EvalResult r;
  if (samples.empty()) return r;
  for (const pipeline::Sample& s : samples) {
    Tensor pred = model::forward(s.x, params, cfg);
    r.mean_loss += bce_loss(pred, s.y).value();
    r.topk_accuracy += topk_accuracy(pred.data(), s.y, cfg.k_top);
  }
  const auto n = static_cast<double>(samples.size());
  r.mean_loss /= n;
  r.topk_accuracy /= n;
  return r;
}

TrainResult train(model::ModelParams params, const model::ViTConfig& cfg,
                  std::span<const pipeline::Sample> train_samples,
                  std::span<const pipeline::Sample> test_samples,
                  const TrainConfig& tcfg) {
  cfg.validate();
  tcfg.validate();
  if (train_samples.empty()) throw ConfigError("train: empty training set");

  double max_entry = 0.0;
  for (const pipeline::Sample& s : train_samples) {
    for (double v : s.x.data()) max_entry = std::max(max_entry, v);
  }
  params.input_scale = 1.0 / std::max(1.0, max_entry);

  TrainResult result;
  auto log_epoch = [&](size_t epoch) {
    const EvalResult tr = evaluate(params, cfg, train_samples);
    result.history.push_back({epoch, true, tr.mean_loss, tr.topk_accuracy, 0});
    if (!test_samples.empty()) {
      const EvalResult te = evaluate(params, cfg, test_samples);
      result.history.push_back({epoch, false, te.mean_loss, te.topk_accuracy, 0});
    }
  };
  log_epoch(0);

  std::vector<Tensor> flat = params.tensors();
  OptimState state = OptimState::like(flat);
  std::vector<size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(tcfg.seed, "batching-" + std::to_string(epoch));
    shuffle_rng.shuffle(order);

    for (size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      const size_t stop = std::min(order.size(), start + tcfg.batch_size);
      GradTape tape;
      model::ModelParams bound = params.bind(tape);
      Tensor total;
      for (size_t i = start; i < stop; ++i) {
        const pipeline::Sample& s = train_samples[order[i]];
        Tensor loss = bce_loss(model::forward(s.x, bound, cfg), s.y);
        total = total.defined() ? add(total, loss) : loss;
      }
      Tensor batch_loss = scale(total, 1.0 / static_cast<double>(stop - start));
      if (!std::isfinite(batch_loss.value())) {
        throw NumericError("train: NaN loss at epoch " + std::to_string(epoch));
      }
      tape.backward(batch_loss);
      const std::vector<Tensor> grads = bound.collect_grads(tape);
      adam_step(flat, grads, state, tcfg);

      size_t idx = 0;
      params.for_each([&flat, &idx](const std::string&, Tensor& t) {
        t = flat[idx++];
      });
    }
    log_epoch(epoch);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace vitcat::train
